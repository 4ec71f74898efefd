// Attention supervision: per-layer visual-attention distributions at the
// last answer token, the KL attention loss against the ground-truth map, the
// answer-token NTP loss, and their weighted combination.
#pragma once

#include <string>
#include <vector>

#include "klal/dataset.hpp"
#include "klal/model.hpp"
#include "klal/tensor.hpp"

namespace klal {

// One distribution over the visual span per layer, heads averaged after
// per-head renormalization.
struct VisualAttentionDistribution {
    std::vector<const Tensor*> per_layer;  // each 1 x visual_len
    int visual_len = 0;
};

// For each layer: take the answer-position row of every head's attention
// matrix, restrict it to the visual span, renormalize each head's slice to
// sum one, and average across heads. Differentiable end to end.
inline VisualAttentionDistribution extract_visual_attention(Graph& g,
                                                            const AttentionTrace& trace,
                                                            int visual_start, int visual_len,
                                                            int answer_pos) {
    if (trace.empty() || trace[0].empty())
        throw std::invalid_argument("extract_visual_attention: empty trace");
    if (answer_pos <= visual_start + visual_len - 1)
        throw std::invalid_argument(
            "extract_visual_attention: answer position must follow the visual span");
    VisualAttentionDistribution out;
    out.visual_len = visual_len;
    for (const auto& heads : trace) {
        std::vector<const Tensor*> normalized;
        for (const Tensor* attn : heads) {
            if (answer_pos >= attn->rows())
                throw std::invalid_argument(
                    "extract_visual_attention: trace does not cover the answer position");
            const Tensor& row = g.slice_rows(*attn, answer_pos, 1);
            const Tensor& visual = g.slice_cols(row, visual_start, visual_len);
            normalized.push_back(&g.renormalize_rows(visual));
        }
        // mean_stack keeps the average bit-identical under head permutation
        out.per_layer.push_back(&g.mean_stack(normalized));
    }
    return out;
}

// Teacher-forced next-token loss over answer positions only: the logits at
// position t-1 score token t, and only answer tokens are scored.
inline const Tensor& ntp_loss(Graph& g, const Tensor& logits, const TokenLayout& layout) {
    if (layout.answer_ids.empty()) throw std::invalid_argument("ntp_loss: empty answer span");
    const std::vector<int> ids = layout.full_ids();
    const int total = layout.total_len();
    if (logits.rows() != total)
        throw std::invalid_argument("ntp_loss: logits rows " + std::to_string(logits.rows()) +
                                    " vs sequence length " + std::to_string(total));
    std::vector<int> targets(static_cast<size_t>(total), 0);
    std::vector<uint8_t> active(static_cast<size_t>(total), 0);
    for (int r = 0; r + 1 < total; ++r) {
        if (r + 1 >= layout.answer_start()) {
            targets[static_cast<size_t>(r)] = ids[static_cast<size_t>(r) + 1];
            active[static_cast<size_t>(r)] = 1;
        }
    }
    // the anchor row predicts nothing
    active[static_cast<size_t>(total) - 1] = 0;
    return g.cross_entropy_logits(logits, targets, active);
}

// Mean over layers of KL(p || q_layer); p is a constant target.
inline const Tensor& klal_loss(Graph& g, const VisualAttentionDistribution& q, const Tensor& p) {
    if (q.per_layer.empty()) throw std::invalid_argument("klal_loss: no layers");
    if (p.numel() != q.visual_len)
        throw std::invalid_argument("klal_loss: target length " + std::to_string(p.numel()) +
                                    " vs visual span " + std::to_string(q.visual_len));
    const Tensor* acc = nullptr;
    for (const Tensor* layer_q : q.per_layer) {
        const Tensor& kl = g.kl_divergence(p, *layer_q);
        acc = acc ? &g.add(*acc, kl) : &kl;
    }
    return g.scale(*acc, 1.0 / static_cast<double>(q.per_layer.size()));
}

struct LossBreakdown {
    double ntp = 0, klal = 0, total = 0;
    double lambda = 0;
    const Tensor* total_tensor = nullptr;  // backward entry point
};

// total = ntp + lambda * klal at the last answer token of the teacher-forced
// sequence. With lambda == 0 the KLAL term is evaluated for the log but never
// joins the loss graph, so the backward pass is bit-identical to plain NTP.
inline LossBreakdown total_loss(Graph& g, const Sample& sample, const ForwardOutput& fwd,
                                double lambda) {
    const TokenLayout& layout = sample.layout;
    const Tensor& p =
        g.constant({static_cast<int64_t>(sample.gt_map.values.size())},
                   std::vector<double>(sample.gt_map.values.begin(), sample.gt_map.values.end()));
    const Tensor& ntp = ntp_loss(g, *fwd.logits, layout);
    const VisualAttentionDistribution q = extract_visual_attention(
        g, fwd.attention, layout.visual_start, layout.visual_len, layout.anchor());
    const Tensor& klal = klal_loss(g, q, p);

    LossBreakdown out;
    out.lambda = lambda;
    out.ntp = ntp.at(0);
    out.klal = klal.at(0);
    if (lambda == 0.0) {
        out.total = out.ntp;
        out.total_tensor = &ntp;
    } else {
        const Tensor& total = g.add(ntp, g.scale(klal, lambda));
        out.total = total.at(0);
        out.total_tensor = &total;
    }
    return out;
}

}  // namespace klal
