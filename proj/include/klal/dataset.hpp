// Sample assembly for the three synthetic tasks: target-patch sets from task
// geometry, smoothed ground-truth attention maps, token layouts, and the
// line-delimited dataset format (manifest + PPM images).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "klal/common.hpp"
#include "klal/geometry.hpp"
#include "klal/image.hpp"
#include "klal/raster.hpp"
#include "klal/vocab.hpp"

namespace klal {

enum class TaskKind { intersection, tracing, gridpatch };

inline std::string task_name(TaskKind k) {
    switch (k) {
        case TaskKind::intersection: return "intersection";
        case TaskKind::tracing: return "tracing";
        case TaskKind::gridpatch: return "gridpatch";
    }
    throw std::logic_error("task_name: bad kind");
}

inline TaskKind task_from_name(const std::string& s) {
    if (s == "intersection") return TaskKind::intersection;
    if (s == "tracing") return TaskKind::tracing;
    if (s == "gridpatch") return TaskKind::gridpatch;
    throw std::invalid_argument("unknown task kind '" + s + "'");
}

// Sequence order is [system, visual, instruction, answer]. Visual positions
// hold patch embeddings, not ids; full_ids() fills them with PAD.
struct TokenLayout {
    std::vector<int> system_ids;
    int visual_start = 0;
    int visual_len = 0;
    std::vector<int> instruction_ids;
    std::vector<int> answer_ids;

    int total_len() const {
        return static_cast<int>(system_ids.size()) + visual_len +
               static_cast<int>(instruction_ids.size()) + static_cast<int>(answer_ids.size());
    }
    int instruction_start() const { return visual_start + visual_len; }
    int answer_start() const {
        return instruction_start() + static_cast<int>(instruction_ids.size());
    }
    // supervision anchor: position of the last answer token
    int anchor() const { return total_len() - 1; }

    std::vector<int> full_ids() const {
        std::vector<int> ids;
        ids.reserve(static_cast<size_t>(total_len()));
        ids.insert(ids.end(), system_ids.begin(), system_ids.end());
        ids.insert(ids.end(), static_cast<size_t>(visual_len), Vocabulary::kPad);
        ids.insert(ids.end(), instruction_ids.begin(), instruction_ids.end());
        ids.insert(ids.end(), answer_ids.begin(), answer_ids.end());
        return ids;
    }

    void validate() const {
        if (answer_ids.empty()) throw std::invalid_argument("TokenLayout: empty answer");
        if (visual_len <= 0) throw std::invalid_argument("TokenLayout: empty visual span");
        if (visual_start != static_cast<int>(system_ids.size()))
            throw std::invalid_argument("TokenLayout: visual span must follow system tokens");
    }

    friend bool operator==(const TokenLayout&, const TokenLayout&) = default;
};

// --- ground-truth attention maps ---------------------------------------------

struct SmoothingSpec {
    double sigma = 0.5;      // in patches
    int radius = 2;          // truncation radius (Chebyshev), in patches
    double background = 0.05;  // total background mass added before normalization

    friend bool operator==(const SmoothingSpec&, const SmoothingSpec&) = default;
};

// With radius 2, sigma <= 0.55 keeps the whole truncated ring mass below the
// center weight, so the argmax provably stays on a target patch for any
// target set.
inline SmoothingSpec default_smoothing() { return {0.5, 2, 0.05}; }
// Point annotations: single target, slightly wider bell.
inline SmoothingSpec light_smoothing() { return {0.75, 1, 0.05}; }

struct GroundTruthAttentionMap {
    std::vector<double> values;  // over visual-token indices, row-major grid
    int grid_rows = 0, grid_cols = 0;
    SmoothingSpec smoothing;  // provenance only, not serialized

    friend bool operator==(const GroundTruthAttentionMap& a, const GroundTruthAttentionMap& b) {
        return a.values == b.values;
    }
};

// Indicator over target patches, convolved with a truncated Gaussian on the
// patch grid, uniform background floor added, normalized, and quantized to
// 9-decimal fixed point (the serialized precision) with the residual folded
// into the argmax cell so the decimal sum is exactly one.
inline GroundTruthAttentionMap build_gt_map(const std::vector<int>& target_patches,
                                            const PatchGrid& grid,
                                            const SmoothingSpec& smoothing = default_smoothing()) {
    if (target_patches.empty()) throw std::invalid_argument("build_gt_map: empty target set");
    const int n = grid.count();
    for (int t : target_patches)
        if (t < 0 || t >= n)
            throw std::invalid_argument("build_gt_map: target patch " + std::to_string(t) +
                                        " outside grid of " + std::to_string(n));

    std::vector<double> sm(static_cast<size_t>(n), 0.0);
    const int r = smoothing.radius;
    for (int t : target_patches) {
        const int tr = grid.row_of(t), tc = grid.col_of(t);
        for (int dr = -r; dr <= r; ++dr) {
            for (int dc = -r; dc <= r; ++dc) {
                const int rr = tr + dr, cc = tc + dc;
                if (rr < 0 || rr >= grid.rows() || cc < 0 || cc >= grid.cols()) continue;
                double w;
                if (smoothing.sigma <= 0) {
                    w = (dr == 0 && dc == 0) ? 1.0 : 0.0;
                } else {
                    w = std::exp(-(dr * dr + dc * dc) /
                                 (2.0 * smoothing.sigma * smoothing.sigma));
                }
                sm[static_cast<size_t>(grid.index_of(rr, cc))] += w;
            }
        }
    }
    double total = 0;
    for (double v : sm) total += v;
    for (auto& v : sm) v /= total;
    if (smoothing.background > 0) {
        const double floor_per_cell = smoothing.background / n;
        for (auto& v : sm) v = (v + floor_per_cell) / (1.0 + smoothing.background);
    }

    // quantize to the serialized grid, keeping the decimal sum at exactly 1
    size_t arg = 0;
    for (size_t i = 1; i < sm.size(); ++i)
        if (sm[i] > sm[arg]) arg = i;
    std::vector<int64_t> q(static_cast<size_t>(n));
    int64_t qsum = 0;
    for (size_t i = 0; i < sm.size(); ++i) {
        q[i] = static_cast<int64_t>(std::llround(sm[i] * 1e9));
        qsum += q[i];
    }
    q[arg] += 1000000000 - qsum;

    GroundTruthAttentionMap map;
    map.grid_rows = grid.rows();
    map.grid_cols = grid.cols();
    map.smoothing = smoothing;
    map.values.resize(static_cast<size_t>(n));
    for (size_t i = 0; i < q.size(); ++i) map.values[i] = static_cast<double>(q[i]) / 1e9;

    size_t final_arg = 0;
    for (size_t i = 1; i < map.values.size(); ++i)
        if (map.values[i] > map.values[final_arg]) final_arg = i;
    if (std::find(target_patches.begin(), target_patches.end(),
                  static_cast<int>(final_arg)) == target_patches.end())
        throw std::invalid_argument("build_gt_map: smoothing too wide, argmax left the target set");
    return map;
}

inline GroundTruthAttentionMap gt_from_point(Vec2 pt, const PatchGrid& grid,
                                             const SmoothingSpec& smoothing = light_smoothing()) {
    return build_gt_map({point_to_patch(pt, grid)}, grid, smoothing);
}

struct BBox {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
};

// Target patches are the ones traversed by the box's center line: horizontal
// when the box is at least as wide as tall (ties go horizontal), else
// vertical.
inline GroundTruthAttentionMap gt_from_bbox(const BBox& box, const PatchGrid& grid,
                                            const SmoothingSpec& smoothing = default_smoothing()) {
    if (!(box.width() > 0) || !(box.height() > 0))
        throw std::invalid_argument("gt_from_bbox: box must have positive area");
    if (box.x0 < 0 || box.y0 < 0 || box.x1 > grid.image_w || box.y1 > grid.image_h)
        throw std::invalid_argument("gt_from_bbox: box outside image");
    // boxes are half-open in patch terms: pull the far endpoint inside so a
    // box flush with a patch boundary does not leak into the next patch
    const auto shrink = [&](double lo, double hi) { return std::max(lo, hi - 1e-6); };
    Polyline center_line;
    if (box.width() >= box.height()) {
        const double cy = std::min(0.5 * (box.y0 + box.y1), grid.image_h - 1e-6);
        center_line.vertices = {{box.x0, cy}, {shrink(box.x0, box.x1), cy}};
    } else {
        const double cx = std::min(0.5 * (box.x0 + box.x1), grid.image_w - 1e-6);
        center_line.vertices = {{cx, box.y0}, {cx, shrink(box.y0, box.y1)}};
    }
    std::vector<int> targets = trace_polyline_patches(center_line, grid);
    std::sort(targets.begin(), targets.end());
    return build_gt_map(targets, grid, smoothing);
}

// --- samples -------------------------------------------------------------------

struct Sample {
    std::string id;
    TaskKind task = TaskKind::intersection;
    std::string image_path;  // relative to the dataset directory
    Image image;
    TokenLayout layout;
    std::vector<int> target_patches;  // I_P, sorted ascending
    GroundTruthAttentionMap gt_map;
    std::string label;
    uint64_t seed = 0;

    friend bool operator==(const Sample&, const Sample&) = default;
};

namespace detail {

inline std::string sample_image_path(const std::string& id) { return "images/" + id + ".ppm"; }

inline TokenLayout make_layout(const PatchGrid& grid, std::vector<int> instruction,
                               std::vector<int> answer) {
    TokenLayout layout;
    layout.system_ids = {Vocabulary::kBos};
    layout.visual_start = 1;
    layout.visual_len = grid.count();
    layout.instruction_ids = std::move(instruction);
    layout.answer_ids = std::move(answer);
    layout.validate();
    return layout;
}

}  // namespace detail

// Crossing-count sample. For count zero the map would be undefined, so the
// target set falls back to every patch either line passes through.
inline Sample make_intersection_sample(uint64_t seed, int count,
                                       const PatchGrid& grid = PatchGrid(),
                                       const PolylinePairConfig& gen_cfg = {}) {
    const auto [red, blue] = gen_polyline_pair(seed, count, gen_cfg);
    const IntersectionResult hits = count_intersections(red, blue);

    std::set<int> targets;
    if (hits.count == 0) {
        for (int c : trace_polyline_patches(red, grid)) targets.insert(c);
        for (int c : trace_polyline_patches(blue, grid)) targets.insert(c);
    } else {
        for (const Vec2& p : hits.points) targets.insert(point_to_patch(p, grid));
    }

    Sample s;
    s.id = "intersection-" + std::to_string(seed);
    s.task = TaskKind::intersection;
    s.image = render_line_pair(red, blue, grid.image_w, grid.image_h);
    s.image_path = detail::sample_image_path(s.id);
    s.target_patches.assign(targets.begin(), targets.end());
    s.gt_map = build_gt_map(s.target_patches, grid);
    s.layout = detail::make_layout(grid, {Vocabulary::kAskIntersections, Vocabulary::kSep},
                                   {Vocabulary::digit_token(count)});
    s.label = std::to_string(count);
    s.seed = seed;
    return s;
}

// Connectivity question over a generated scene. YES targets trace the joining
// edge; NO targets mark the two queried node patches, where the decision
// evidence sits.
inline Sample make_tracing_sample(uint64_t seed, std::pair<int, int> node_pair,
                                  const PatchGrid& grid = PatchGrid(),
                                  const GraphSceneConfig& gen_cfg = {}) {
    const GraphScene scene = gen_graph(seed, gen_cfg);
    const auto [a, b] = node_pair;
    const int n = static_cast<int>(scene.nodes.size());
    if (a < 0 || a >= n || b < 0 || b >= n || a == b)
        throw std::invalid_argument("make_tracing_sample: bad node pair");

    const bool connected = nodes_connected(scene, a, b);
    std::set<int> targets;
    if (connected) {
        for (size_t e = 0; e < scene.edges.size(); ++e) {
            const auto [u, v] = scene.edge_endpoints[e];
            if ((u == a && v == b) || (u == b && v == a)) {
                for (int c : trace_polyline_patches(scene.edges[e], grid)) targets.insert(c);
                break;
            }
        }
    } else {
        targets.insert(point_to_patch(scene.nodes[static_cast<size_t>(a)].center, grid));
        targets.insert(point_to_patch(scene.nodes[static_cast<size_t>(b)].center, grid));
    }

    Sample s;
    s.id = "tracing-" + std::to_string(seed) + "-" + std::to_string(a) + "-" + std::to_string(b);
    s.task = TaskKind::tracing;
    s.image = render_graph_scene(scene);
    s.image_path = detail::sample_image_path(s.id);
    s.target_patches.assign(targets.begin(), targets.end());
    s.gt_map = build_gt_map(s.target_patches, grid);
    s.layout = detail::make_layout(
        grid,
        {Vocabulary::kAskConnected, Vocabulary::node_token(scene.nodes[static_cast<size_t>(a)].label),
         Vocabulary::node_token(scene.nodes[static_cast<size_t>(b)].label), Vocabulary::kSep},
        {connected ? Vocabulary::kYes : Vocabulary::kNo});
    s.label = connected ? "yes" : "no";
    s.seed = seed;
    return s;
}

// Pointing sample: one uniformly random red cell; the answer encodes its
// (row, col) grid coordinates.
inline Sample make_gridpatch_sample(uint64_t seed, const PatchGrid& grid = PatchGrid()) {
    Rng rng(mix_seed(seed, 0x9d1dca7c4));
    const int cell = static_cast<int>(rng.uniform_int(0, grid.count() - 1));

    Sample s;
    s.id = "gridpatch-" + std::to_string(seed);
    s.task = TaskKind::gridpatch;
    s.image = render_grid_patch(grid, cell);
    s.image_path = detail::sample_image_path(s.id);
    s.target_patches = {cell};
    s.gt_map = build_gt_map(s.target_patches, grid, light_smoothing());
    s.layout = detail::make_layout(grid, {Vocabulary::kAskCell, Vocabulary::kSep},
                                   {Vocabulary::coord_token(grid.row_of(cell)),
                                    Vocabulary::coord_token(grid.col_of(cell))});
    s.label = std::to_string(grid.row_of(cell)) + "," + std::to_string(grid.col_of(cell));
    s.seed = seed;
    return s;
}

// --- dataset builders ------------------------------------------------------------

// Crossing counts cycle through [count_lo, count_hi] so categories stay evenly
// covered, mirroring per-category generation.
inline std::vector<Sample> gen_intersection_dataset(uint64_t seed, int n, int count_lo,
                                                    int count_hi,
                                                    const PatchGrid& grid = PatchGrid()) {
    if (count_lo > count_hi) throw std::invalid_argument("gen_intersection_dataset: bad range");
    std::vector<Sample> out;
    out.reserve(static_cast<size_t>(n));
    char idbuf[64];
    for (int i = 0; i < n; ++i) {
        const int count = count_lo + i % (count_hi - count_lo + 1);
        Sample s = make_intersection_sample(mix_seed(seed, static_cast<uint64_t>(i)), count, grid);
        std::snprintf(idbuf, sizeof(idbuf), "intersection-%06d", i);
        s.id = idbuf;
        s.image_path = detail::sample_image_path(s.id);
        out.push_back(std::move(s));
    }
    return out;
}

// Yes/No questions per scene with a dataset-level balance of answers
// (|yes - no| <= 1). Scenes alternate between 3-edge and 2-edge graphs so the
// yes capacity per image averages questions_per_image / 2.
inline std::vector<Sample> gen_tracing_dataset(uint64_t seed, int n_images,
                                               int questions_per_image,
                                               const PatchGrid& grid = PatchGrid()) {
    std::vector<Sample> out;
    out.reserve(static_cast<size_t>(n_images) * questions_per_image);
    int yes_count = 0, no_count = 0, index = 0;
    char idbuf[64];
    for (int img = 0; img < n_images; ++img) {
        const uint64_t scene_seed = mix_seed(seed, static_cast<uint64_t>(img));
        GraphSceneConfig scene_cfg;
        scene_cfg.width = grid.image_w;
        scene_cfg.height = grid.image_h;
        if (img % 2 == 0) {
            scene_cfg.edge_count = 3;
            scene_cfg.min_outer = 5;
        } else {
            scene_cfg.edge_count = 2;
        }
        const GraphScene scene = gen_graph(scene_seed, scene_cfg);
        Rng rng(mix_seed(scene_seed, 0x9e57));
        const int n = static_cast<int>(scene.nodes.size());

        std::vector<std::pair<int, int>> yes_pairs, no_pairs;
        for (int a = 0; a < n; ++a)
            for (int b = a + 1; b < n; ++b)
                (nodes_connected(scene, a, b) ? yes_pairs : no_pairs).emplace_back(a, b);
        rng.shuffle(yes_pairs);
        rng.shuffle(no_pairs);

        for (int q = 0; q < questions_per_image; ++q) {
            const bool want_yes = yes_count <= no_count;
            std::pair<int, int> pair;
            if (want_yes && !yes_pairs.empty()) {
                pair = yes_pairs.back();
                yes_pairs.pop_back();
            } else if (!no_pairs.empty()) {
                pair = no_pairs.back();
                no_pairs.pop_back();
            } else {
                pair = yes_pairs.back();
                yes_pairs.pop_back();
            }
            Sample s = make_tracing_sample(scene_seed, pair, grid, scene_cfg);
            (s.label == "yes" ? yes_count : no_count) += 1;
            std::snprintf(idbuf, sizeof(idbuf), "tracing-%06d", index++);
            s.id = idbuf;
            s.image_path = detail::sample_image_path(s.id);
            out.push_back(std::move(s));
        }
    }
    return out;
}

inline std::vector<Sample> gen_gridpatch_dataset(uint64_t seed, int n,
                                                 const PatchGrid& grid = PatchGrid()) {
    std::vector<Sample> out;
    out.reserve(static_cast<size_t>(n));
    char idbuf[64];
    for (int i = 0; i < n; ++i) {
        Sample s = make_gridpatch_sample(mix_seed(seed, static_cast<uint64_t>(i)), grid);
        std::snprintf(idbuf, sizeof(idbuf), "gridpatch-%06d", i);
        s.id = idbuf;
        s.image_path = detail::sample_image_path(s.id);
        out.push_back(std::move(s));
    }
    return out;
}

// --- serialization -----------------------------------------------------------------
//
// manifest.txt, UTF-8, one record per line after the version header. Fields
// are tab-separated in this fixed order:
//   id  task  image_path  system_ids  visual_span  instruction_ids
//   answer_ids  target_patches  gt_map  label  seed
// Integer lists are comma-separated; visual_span is "start,len"; the gt map
// is space-separated fixed-point with 9 decimal places.

constexpr const char* kDatasetHeader = "klal-dataset v1";

namespace detail {

inline std::string join_ints(const std::vector<int>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(v[i]);
    }
    return s;
}

inline std::vector<int> split_ints(const std::string& s, const char* what, size_t lineno) {
    std::vector<int> out;
    if (s.empty()) return out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            out.push_back(std::stoi(tok));
        } catch (const std::exception&) {
            throw std::runtime_error("manifest line " + std::to_string(lineno) + ": bad " +
                                     what + " entry '" + tok + "'");
        }
    }
    return out;
}

}  // namespace detail

inline void write_dataset(const std::vector<Sample>& samples, const std::string& dir,
                          bool also_png = false) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "images");
    std::ofstream out(fs::path(dir) / "manifest.txt", std::ios::binary);
    if (!out) throw std::runtime_error("write_dataset: cannot open manifest in " + dir);
    out << kDatasetHeader << "\n";
    char num[32];
    for (const Sample& s : samples) {
        write_ppm(s.image, (fs::path(dir) / s.image_path).string());
        if (also_png) {
            std::string png = s.image_path;
            png.replace(png.size() - 4, 4, ".png");
            write_png(s.image, (fs::path(dir) / png).string());
        }
        out << s.id << '\t' << task_name(s.task) << '\t' << s.image_path << '\t'
            << detail::join_ints(s.layout.system_ids) << '\t' << s.layout.visual_start << ','
            << s.layout.visual_len << '\t' << detail::join_ints(s.layout.instruction_ids) << '\t'
            << detail::join_ints(s.layout.answer_ids) << '\t'
            << detail::join_ints(s.target_patches) << '\t';
        for (size_t i = 0; i < s.gt_map.values.size(); ++i) {
            std::snprintf(num, sizeof(num), "%.9f", s.gt_map.values[i]);
            if (i) out << ' ';
            out << num;
        }
        out << '\t' << s.label << '\t' << s.seed << "\n";
    }
    if (!out) throw std::runtime_error("write_dataset: short write in " + dir);
}

inline std::vector<Sample> read_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream in(fs::path(dir) / "manifest.txt", std::ios::binary);
    if (!in) throw std::runtime_error("read_dataset: cannot open manifest in " + dir);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("read_dataset: empty manifest");
    if (line != kDatasetHeader)
        throw std::runtime_error("read_dataset: dataset version mismatch: got '" + line + "'");

    std::vector<Sample> samples;
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        {
            std::stringstream ss(line);
            std::string f;
            while (std::getline(ss, f, '\t')) fields.push_back(f);
        }
        if (fields.size() != 11)
            throw std::runtime_error("manifest line " + std::to_string(lineno) +
                                     ": expected 11 fields, got " +
                                     std::to_string(fields.size()));
        Sample s;
        s.id = fields[0];
        s.task = task_from_name(fields[1]);
        s.image_path = fields[2];
        s.layout.system_ids = detail::split_ints(fields[3], "system id", lineno);
        {
            const auto span = detail::split_ints(fields[4], "visual span", lineno);
            if (span.size() != 2)
                throw std::runtime_error("manifest line " + std::to_string(lineno) +
                                         ": visual span needs start,len");
            s.layout.visual_start = span[0];
            s.layout.visual_len = span[1];
        }
        s.layout.instruction_ids = detail::split_ints(fields[5], "instruction id", lineno);
        s.layout.answer_ids = detail::split_ints(fields[6], "answer id", lineno);
        s.target_patches = detail::split_ints(fields[7], "target patch", lineno);
        {
            std::stringstream ss(fields[8]);
            std::string tok;
            while (ss >> tok) {
                char* end = nullptr;
                const double v = std::strtod(tok.c_str(), &end);
                if (end != tok.c_str() + tok.size())
                    throw std::runtime_error("manifest line " + std::to_string(lineno) +
                                             ": bad gt value '" + tok + "'");
                s.gt_map.values.push_back(v);
            }
            if (s.gt_map.values.size() != static_cast<size_t>(s.layout.visual_len))
                throw std::runtime_error("manifest line " + std::to_string(lineno) +
                                         ": gt map length " +
                                         std::to_string(s.gt_map.values.size()) +
                                         " does not match visual span");
        }
        s.label = fields[9];
        try {
            s.seed = std::stoull(fields[10]);
        } catch (const std::exception&) {
            throw std::runtime_error("manifest line " + std::to_string(lineno) + ": bad seed '" +
                                     fields[10] + "'");
        }
        try {
            s.layout.validate();
        } catch (const std::exception& e) {
            throw std::runtime_error("manifest line " + std::to_string(lineno) + ": " + e.what());
        }
        s.image = read_ppm((fs::path(dir) / s.image_path).string());
        // square-grid reconstruction for the in-memory map geometry
        const int cells = s.layout.visual_len;
        const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(cells))));
        if (side * side == cells) {
            s.gt_map.grid_rows = side;
            s.gt_map.grid_cols = side;
        }
        samples.push_back(std::move(s));
    }
    return samples;
}

}  // namespace klal
