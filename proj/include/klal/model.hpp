// Decoder-only causal transformer over [system, visual, instruction, answer]
// sequences. Visual tokens come from a learned linear patch projection; every
// attention matrix is captured post-softmax exactly as used in the forward
// pass. Checkpoints are a versioned binary format with bit-exact round trips.
#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "klal/common.hpp"
#include "klal/dataset.hpp"
#include "klal/geometry.hpp"
#include "klal/image.hpp"
#include "klal/tensor.hpp"
#include "klal/vocab.hpp"

namespace klal {

struct ModelConfig {
    int layers = 4;
    int heads = 4;
    int d_model = 64;
    int vocab = Vocabulary::size();
    int image_w = 64, image_h = 64;
    int patch = 8;
    int max_seq = 96;
    uint64_t seed = 1;

    int d_k() const { return d_model / heads; }
    int patch_dim() const { return patch * patch * 3; }
    PatchGrid grid() const { return PatchGrid(image_w, image_h, patch); }

    void validate() const {
        if (layers <= 0 || heads <= 0 || d_model <= 0)
            throw std::invalid_argument("ModelConfig: non-positive dimensions");
        if (d_model % heads != 0)
            throw std::invalid_argument("ModelConfig: d_model " + std::to_string(d_model) +
                                        " not divisible by heads " + std::to_string(heads));
        grid();  // validates divisibility
        if (max_seq < grid().count() + 3)
            throw std::invalid_argument("ModelConfig: max_seq too small for the visual span");
    }

    TextKv to_kv() const {
        TextKv kv;
        kv.set_i64("layers", layers);
        kv.set_i64("heads", heads);
        kv.set_i64("d_model", d_model);
        kv.set_i64("vocab", vocab);
        kv.set_i64("image_w", image_w);
        kv.set_i64("image_h", image_h);
        kv.set_i64("patch", patch);
        kv.set_i64("max_seq", max_seq);
        kv.set_u64("seed", seed);
        return kv;
    }

    static ModelConfig from_kv(const TextKv& kv) {
        ModelConfig c;
        c.layers = static_cast<int>(kv.get_i64("layers"));
        c.heads = static_cast<int>(kv.get_i64("heads"));
        c.d_model = static_cast<int>(kv.get_i64("d_model"));
        c.vocab = static_cast<int>(kv.get_i64("vocab"));
        c.image_w = static_cast<int>(kv.get_i64("image_w"));
        c.image_h = static_cast<int>(kv.get_i64("image_h"));
        c.patch = static_cast<int>(kv.get_i64("patch"));
        c.max_seq = static_cast<int>(kv.get_i64("max_seq"));
        c.seed = kv.get_u64("seed");
        c.validate();
        return c;
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Post-softmax attention matrices, [layer][head], each T x T row-stochastic
// with an exactly-zero upper triangle.
using AttentionTrace = std::vector<std::vector<const Tensor*>>;

struct ForwardOutput {
    const Tensor* logits = nullptr;        // positions x vocab
    const Tensor* final_hidden = nullptr;  // last block output, pre final norm
    AttentionTrace attention;
};

struct VlmBlock {
    Tensor ln1_g, ln1_b;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_g, ln2_b;
    Tensor w1, b1, w2, b2;
};

class Vlm {
public:
    ModelConfig cfg;
    Tensor tok_emb, pos_emb;
    Tensor patch_w, patch_b, patch_pos;
    std::vector<VlmBlock> blocks;
    Tensor lnf_g, lnf_b;
    Tensor head_w;

    static Vlm init(const ModelConfig& cfg) {
        cfg.validate();
        Vlm m;
        m.cfg = cfg;
        const int64_t d = cfg.d_model, ff = 4 * cfg.d_model;
        Rng rng(mix_seed(cfg.seed, 0x1417));

        const auto normal = [&](std::vector<int64_t> shape, double sd) {
            Tensor t(std::move(shape), 0.0, true);
            t.fill_normal(rng, sd);
            return t;
        };
        const auto fill = [&](std::vector<int64_t> shape, double v) {
            return Tensor(std::move(shape), v, true);
        };

        m.tok_emb = normal({cfg.vocab, d}, 0.02);
        m.pos_emb = normal({cfg.max_seq, d}, 0.01);
        m.patch_w = normal({cfg.patch_dim(), d}, 0.02);
        m.patch_b = fill({d}, 0.0);
        m.patch_pos = normal({cfg.grid().count(), d}, 0.01);
        m.blocks.resize(static_cast<size_t>(cfg.layers));
        for (auto& b : m.blocks) {
            b.ln1_g = fill({d}, 1.0);
            b.ln1_b = fill({d}, 0.0);
            b.wq = normal({d, d}, 0.02);
            b.bq = fill({d}, 0.0);
            b.wk = normal({d, d}, 0.02);
            b.bk = fill({d}, 0.0);
            b.wv = normal({d, d}, 0.02);
            b.bv = fill({d}, 0.0);
            b.wo = normal({d, d}, 0.02);
            b.bo = fill({d}, 0.0);
            b.ln2_g = fill({d}, 1.0);
            b.ln2_b = fill({d}, 0.0);
            b.w1 = normal({d, ff}, 0.02);
            b.b1 = fill({ff}, 0.0);
            b.w2 = normal({ff, d}, 0.02);
            b.b2 = fill({d}, 0.0);
        }
        m.lnf_g = fill({d}, 1.0);
        m.lnf_b = fill({d}, 0.0);
        m.head_w = normal({d, cfg.vocab}, 0.02);
        return m;
    }

    // Declared parameter order; also the checkpoint layout.
    std::vector<std::pair<std::string, Tensor*>> named_params() {
        std::vector<std::pair<std::string, Tensor*>> out;
        out.emplace_back("tok_emb", &tok_emb);
        out.emplace_back("pos_emb", &pos_emb);
        out.emplace_back("patch_w", &patch_w);
        out.emplace_back("patch_b", &patch_b);
        out.emplace_back("patch_pos", &patch_pos);
        for (size_t l = 0; l < blocks.size(); ++l) {
            const std::string p = "block" + std::to_string(l) + ".";
            VlmBlock& b = blocks[l];
            out.emplace_back(p + "ln1_g", &b.ln1_g);
            out.emplace_back(p + "ln1_b", &b.ln1_b);
            out.emplace_back(p + "wq", &b.wq);
            out.emplace_back(p + "bq", &b.bq);
            out.emplace_back(p + "wk", &b.wk);
            out.emplace_back(p + "bk", &b.bk);
            out.emplace_back(p + "wv", &b.wv);
            out.emplace_back(p + "bv", &b.bv);
            out.emplace_back(p + "wo", &b.wo);
            out.emplace_back(p + "bo", &b.bo);
            out.emplace_back(p + "ln2_g", &b.ln2_g);
            out.emplace_back(p + "ln2_b", &b.ln2_b);
            out.emplace_back(p + "w1", &b.w1);
            out.emplace_back(p + "b1", &b.b1);
            out.emplace_back(p + "w2", &b.w2);
            out.emplace_back(p + "b2", &b.b2);
        }
        out.emplace_back("lnf_g", &lnf_g);
        out.emplace_back("lnf_b", &lnf_b);
        out.emplace_back("head_w", &head_w);
        return out;
    }

    std::vector<Tensor*> params() {
        std::vector<Tensor*> out;
        for (auto& [name, t] : named_params()) out.push_back(t);
        return out;
    }

    int64_t param_count() {
        int64_t n = 0;
        for (Tensor* t : params()) n += t->numel();
        return n;
    }

    // Flattened patches scaled to [0,1], row-major within each patch.
    Tensor patch_matrix(const Image& image) const {
        if (image.width() != cfg.image_w || image.height() != cfg.image_h)
            throw std::invalid_argument("patchify: image " + std::to_string(image.width()) + "x" +
                                        std::to_string(image.height()) + " does not match config " +
                                        std::to_string(cfg.image_w) + "x" +
                                        std::to_string(cfg.image_h));
        const PatchGrid grid = cfg.grid();
        Tensor x({grid.count(), cfg.patch_dim()});
        for (int idx = 0; idx < grid.count(); ++idx) {
            const int y0 = grid.row_of(idx) * cfg.patch, x0 = grid.col_of(idx) * cfg.patch;
            int64_t k = 0;
            for (int dy = 0; dy < cfg.patch; ++dy)
                for (int dx = 0; dx < cfg.patch; ++dx) {
                    const Rgb c = image.get(x0 + dx, y0 + dy);
                    x.at(idx, k++) = c.r / 255.0;
                    x.at(idx, k++) = c.g / 255.0;
                    x.at(idx, k++) = c.b / 255.0;
                }
        }
        return x;
    }

    // Linear projection of flattened patches plus a per-patch position
    // embedding: one visual token per grid cell.
    const Tensor& patch_embed(Graph& g, const Image& image) const {
        Tensor patches = patch_matrix(image);
        const Tensor& x = g.constant(patches.shape(), std::move(patches.data()));
        return g.add(g.add_bias(g.matmul(x, patch_w), patch_b), patch_pos);
    }

    ForwardOutput forward(Graph& g, const TokenLayout& layout, const Image& image) const {
        const PatchGrid grid = cfg.grid();
        if (layout.visual_len != grid.count())
            throw std::invalid_argument("forward: layout visual span " +
                                        std::to_string(layout.visual_len) +
                                        " does not match grid " + std::to_string(grid.count()));
        const int total = layout.total_len();
        if (total > cfg.max_seq)
            throw std::invalid_argument("forward: sequence length " + std::to_string(total) +
                                        " exceeds max " + std::to_string(cfg.max_seq));

        std::vector<int> post_ids = layout.instruction_ids;
        post_ids.insert(post_ids.end(), layout.answer_ids.begin(), layout.answer_ids.end());

        const Tensor& vis = patch_embed(g, image);
        const Tensor& pre = g.embedding_lookup(tok_emb, layout.system_ids);
        const Tensor* seq;
        if (post_ids.empty()) {
            seq = &g.concat_rows({&pre, &vis});
        } else {
            const Tensor& post = g.embedding_lookup(tok_emb, post_ids);
            seq = &g.concat_rows({&pre, &vis, &post});
        }
        const Tensor& x0 = g.add(*seq, g.slice_rows(pos_emb, 0, total));

        const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(cfg.d_k()));
        const Tensor* x = &x0;
        ForwardOutput out;
        out.attention.resize(static_cast<size_t>(cfg.layers));
        for (int l = 0; l < cfg.layers; ++l) {
            const VlmBlock& b = blocks[static_cast<size_t>(l)];
            const Tensor& h = g.layer_norm(*x, b.ln1_g, b.ln1_b, 1e-5);
            const Tensor& q = g.add_bias(g.matmul(h, b.wq), b.bq);
            const Tensor& k = g.add_bias(g.matmul(h, b.wk), b.bk);
            const Tensor& v = g.add_bias(g.matmul(h, b.wv), b.bv);
            std::vector<const Tensor*> head_ctx;
            for (int hd = 0; hd < cfg.heads; ++hd) {
                const int64_t c0 = static_cast<int64_t>(hd) * cfg.d_k();
                const Tensor& qh = g.slice_cols(q, c0, cfg.d_k());
                const Tensor& kh = g.slice_cols(k, c0, cfg.d_k());
                const Tensor& vh = g.slice_cols(v, c0, cfg.d_k());
                const Tensor& scores =
                    g.scale(g.matmul(qh, g.transpose(kh)), inv_sqrt_dk);
                const Tensor& attn = g.causal_softmax(scores);
                out.attention[static_cast<size_t>(l)].push_back(&attn);
                head_ctx.push_back(&g.matmul(attn, vh));
            }
            const Tensor& ctx = g.concat_cols(head_ctx);
            const Tensor& attn_out = g.add_bias(g.matmul(ctx, b.wo), b.bo);
            const Tensor& x1 = g.add(*x, attn_out);
            const Tensor& h2 = g.layer_norm(x1, b.ln2_g, b.ln2_b, 1e-5);
            const Tensor& ff =
                g.add_bias(g.matmul(g.gelu(g.add_bias(g.matmul(h2, b.w1), b.b1)), b.w2), b.b2);
            x = &g.add(x1, ff);
        }
        out.final_hidden = x;
        out.logits = &g.matmul(g.layer_norm(*x, lnf_g, lnf_b, 1e-5), head_w);
        return out;
    }

    // Argmax decoding from an answer-free prefix; ties break toward the lower
    // token id; stops at EOS or after max_new tokens.
    std::vector<int> greedy_decode(const TokenLayout& prefix, const Image& image,
                                   int max_new) const {
        if (!prefix.answer_ids.empty())
            throw std::invalid_argument("greedy_decode: prefix must end at the instruction");
        TokenLayout cur = prefix;
        std::vector<int> generated;
        for (int step = 0; step < max_new; ++step) {
            Graph g;
            TokenLayout probe = cur;
            probe.answer_ids = generated;
            const ForwardOutput out = forward(g, probe, image);
            const int64_t last = probe.total_len() - 1;
            int best = 0;
            double best_v = out.logits->at(last, 0);
            for (int t = 1; t < cfg.vocab; ++t) {
                const double v = out.logits->at(last, t);
                if (v > best_v) {
                    best_v = v;
                    best = t;
                }
            }
            if (best == Vocabulary::kEos) break;
            generated.push_back(best);
        }
        return generated;
    }
};

// --- checkpoint io ----------------------------------------------------------
//
// Layout: magic "KLALCKPT" | u32 version | u32 config length | config text |
// per parameter in declared order: u32 name length | name | u32 ndim |
// ndim x u64 extents | numel x f64, all integers and floats little-endian.

constexpr char kCheckpointMagic[8] = {'K', 'L', 'A', 'L', 'C', 'K', 'P', 'T'};
constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

template <class T>
void write_raw(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_raw(std::ifstream& in, const char* what) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (in.gcount() != sizeof(T))
        throw std::runtime_error(std::string("checkpoint: truncated (") + what + ")");
    return v;
}

}  // namespace detail

inline void save_checkpoint(Vlm& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out.write(kCheckpointMagic, 8);
    detail::write_raw(out, kCheckpointVersion);
    const std::string config = model.cfg.to_kv().serialize();
    detail::write_raw(out, static_cast<uint32_t>(config.size()));
    out.write(config.data(), static_cast<std::streamsize>(config.size()));
    for (auto& [name, t] : model.named_params()) {
        detail::write_raw(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_raw(out, static_cast<uint32_t>(t->ndim()));
        for (int64_t e : t->shape()) detail::write_raw(out, static_cast<uint64_t>(e));
        out.write(reinterpret_cast<const char*>(t->data().data()),
                  static_cast<std::streamsize>(t->numel() * static_cast<int64_t>(sizeof(double))));
    }
    if (!out) throw std::runtime_error("save_checkpoint: short write to " + path);
}

inline Vlm load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (in.gcount() != 8 || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    const auto version = detail::read_raw<uint32_t>(in, "version");
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    const auto config_len = detail::read_raw<uint32_t>(in, "config length");
    std::string config(config_len, '\0');
    in.read(config.data(), config_len);
    if (in.gcount() != static_cast<std::streamsize>(config_len))
        throw std::runtime_error("checkpoint: truncated (config)");

    Vlm model = Vlm::init(ModelConfig::from_kv(TextKv::parse(config)));
    for (auto& [name, t] : model.named_params()) {
        const auto name_len = detail::read_raw<uint32_t>(in, "name length");
        std::string got(name_len, '\0');
        in.read(got.data(), name_len);
        if (in.gcount() != static_cast<std::streamsize>(name_len))
            throw std::runtime_error("checkpoint: truncated (name)");
        if (got != name)
            throw std::runtime_error("checkpoint: parameter name mismatch, expected '" + name +
                                     "', got '" + got + "'");
        const auto ndim = detail::read_raw<uint32_t>(in, "rank");
        std::vector<int64_t> shape;
        for (uint32_t i = 0; i < ndim; ++i)
            shape.push_back(static_cast<int64_t>(detail::read_raw<uint64_t>(in, "extent")));
        if (shape != t->shape())
            throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
        in.read(reinterpret_cast<char*>(t->data().data()),
                static_cast<std::streamsize>(t->numel() * static_cast<int64_t>(sizeof(double))));
        if (in.gcount() !=
            static_cast<std::streamsize>(t->numel() * static_cast<int64_t>(sizeof(double))))
            throw std::runtime_error("checkpoint: truncated (data for '" + name + "')");
    }
    return model;
}

inline bool models_equal(Vlm& a, Vlm& b) {
    if (!(a.cfg == b.cfg)) return false;
    auto pa = a.named_params(), pb = b.named_params();
    for (size_t i = 0; i < pa.size(); ++i)
        if (pa[i].second->data() != pb[i].second->data()) return false;
    return true;
}

}  // namespace klal
