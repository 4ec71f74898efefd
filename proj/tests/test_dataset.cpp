#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <queue>
#include <set>

#include "klal/dataset.hpp"

using namespace klal;

namespace {

double value_sum(const GroundTruthAttentionMap& m) {
    double s = 0;
    for (double v : m.values) s += v;
    return s;
}

size_t argmax_of(const std::vector<double>& v) {
    size_t a = 0;
    for (size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[a]) a = i;
    return a;
}

void expect_valid_emitted_map(const Sample& s) {
    EXPECT_NEAR(value_sum(s.gt_map), 1.0, 1e-9) << s.id;
    for (double v : s.gt_map.values) EXPECT_GT(v, 0.0) << s.id;
    const int arg = static_cast<int>(argmax_of(s.gt_map.values));
    EXPECT_TRUE(std::find(s.target_patches.begin(), s.target_patches.end(), arg) !=
                s.target_patches.end())
        << s.id;
}

std::string temp_dir(const std::string& tag) {
    const auto dir = std::filesystem::path(::testing::TempDir()) / ("klal_" + tag);
    std::filesystem::remove_all(dir);
    return dir.string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST(GtMap, DeltaKernelNoFloorIsOneHot) {
    const PatchGrid grid(64, 64, 8);
    const auto map = build_gt_map({19}, grid, {0.0, 2, 0.0});
    for (int i = 0; i < grid.count(); ++i)
        EXPECT_DOUBLE_EQ(map.values[static_cast<size_t>(i)], i == 19 ? 1.0 : 0.0);
}

TEST(GtMap, RandomizedInvariants) {
    const PatchGrid grid(64, 64, 8);
    Rng rng(99);
    for (int rep = 0; rep < 500; ++rep) {
        std::set<int> targets;
        const int k = static_cast<int>(rng.uniform_int(1, 8));
        for (int i = 0; i < k; ++i)
            targets.insert(static_cast<int>(rng.uniform_int(0, grid.count() - 1)));
        const std::vector<int> ip(targets.begin(), targets.end());
        const auto map = build_gt_map(ip, grid);
        EXPECT_NEAR(value_sum(map), 1.0, 1e-9);
        for (double v : map.values) EXPECT_GE(v, 0.0);
        const int arg = static_cast<int>(argmax_of(map.values));
        EXPECT_TRUE(targets.count(arg));
    }
}

TEST(GtMap, EmptyTargetsRejected) {
    EXPECT_THROW(build_gt_map({}, PatchGrid()), std::invalid_argument);
    EXPECT_THROW(build_gt_map({64}, PatchGrid()), std::invalid_argument);
}

TEST(GtMap, ThreeByThreeHandComputedOracle) {
    // 3x3 grid, center target, sigma=1, radius=1, background 0.05 total
    const PatchGrid grid(24, 24, 8);
    const SmoothingSpec spec{1.0, 1, 0.05};
    const auto map = build_gt_map({4}, grid, spec);

    double kernel[9];
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
            const int dr = r - 1, dc = c - 1;
            kernel[r * 3 + c] = std::exp(-(dr * dr + dc * dc) / 2.0);
        }
    double ksum = 0;
    for (double v : kernel) ksum += v;
    for (int i = 0; i < 9; ++i) {
        const double smoothed = kernel[i] / ksum;
        const double with_floor = (smoothed + 0.05 / 9.0) / 1.05;
        EXPECT_NEAR(map.values[static_cast<size_t>(i)], with_floor, 1e-8) << "cell " << i;
    }
    EXPECT_NEAR(value_sum(map), 1.0, 1e-9);
}

TEST(GtMap, SmoothedRingStrictlyAboveBackground) {
    const PatchGrid grid(64, 64, 8);
    const auto map = build_gt_map({27}, grid);
    const double bg = map.values[0];  // far corner: pure background
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) {
            const int idx = r * 8 + c;
            const int dr = std::abs(r - 3), dc = std::abs(c - 3);
            if (std::max(dr, dc) <= 2) {
                EXPECT_GT(map.values[static_cast<size_t>(idx)], bg);
            } else {
                EXPECT_DOUBLE_EQ(map.values[static_cast<size_t>(idx)], bg);
            }
        }
}

TEST(GtFromPoint, CenterPointDeterministicAndCompositional) {
    const PatchGrid grid(64, 64, 8);
    const auto a = gt_from_point({32, 32}, grid);
    const auto b = gt_from_point({32, 32}, grid);
    EXPECT_TRUE(a == b);
    EXPECT_EQ(static_cast<int>(argmax_of(a.values)), point_to_patch({32, 32}, grid));
    const auto direct = build_gt_map({point_to_patch({32, 32}, grid)}, grid, light_smoothing());
    EXPECT_TRUE(a == direct);
}

TEST(GtFromBbox, SquareBoxOnePatchWide) {
    const PatchGrid grid(64, 64, 8);
    const auto map = gt_from_bbox({8, 8, 16, 16}, grid);
    EXPECT_EQ(argmax_of(map.values), 9u);  // row 1, col 1 only
    const auto direct = build_gt_map({9}, grid);
    EXPECT_TRUE(map == direct);
}

TEST(GtFromBbox, WideBoxMarksCenterRowPatches) {
    const PatchGrid grid(64, 64, 8);
    // spans columns 2..5 in patch row 3
    const auto map = gt_from_bbox({16, 24, 48, 32}, grid);
    const auto direct = build_gt_map({26, 27, 28, 29}, grid);
    EXPECT_TRUE(map == direct);
}

TEST(GtFromBbox, RandomBoxesMatchTraceOfCenterSegment) {
    const PatchGrid grid(64, 64, 8);
    Rng rng(3);
    for (int rep = 0; rep < 200; ++rep) {
        const double x0 = rng.uniform(0, 50), y0 = rng.uniform(0, 50);
        const double w = rng.uniform(1, 63 - x0), h = rng.uniform(1, 63 - y0);
        const BBox box{x0, y0, x0 + w, y0 + h};
        const auto map = gt_from_bbox(box, grid);
        Polyline line;
        if (w >= h) {
            const double cy = y0 + h / 2;
            line.vertices = {{x0, cy}, {std::max(x0, x0 + w - 1e-6), cy}};
        } else {
            const double cx = x0 + w / 2;
            line.vertices = {{cx, y0}, {cx, std::max(y0, y0 + h - 1e-6)}};
        }
        auto targets = trace_polyline_patches(line, grid);
        std::sort(targets.begin(), targets.end());
        EXPECT_TRUE(map == build_gt_map(targets, grid)) << "rep " << rep;
    }
}

TEST(GtFromBbox, ZeroAreaRejected) {
    EXPECT_THROW(gt_from_bbox({5, 5, 5, 9}, PatchGrid()), std::invalid_argument);
}

TEST(IntersectionSample, ZeroCountUsesLinePatches) {
    const PatchGrid grid(64, 64, 8);
    const Sample s = make_intersection_sample(11, 0, grid);
    expect_valid_emitted_map(s);
    EXPECT_EQ(s.label, "0");
    // the map peaks somewhere on the drawn lines
    const auto [red, blue] = gen_polyline_pair(11, 0);
    std::set<int> line_patches;
    for (int c : trace_polyline_patches(red, grid)) line_patches.insert(c);
    for (int c : trace_polyline_patches(blue, grid)) line_patches.insert(c);
    EXPECT_EQ(std::set<int>(s.target_patches.begin(), s.target_patches.end()), line_patches);
    EXPECT_TRUE(line_patches.count(static_cast<int>(argmax_of(s.gt_map.values))));
}

TEST(IntersectionSample, TargetsMatchOraclePoints) {
    const PatchGrid grid(64, 64, 8);
    const Sample s = make_intersection_sample(22, 2, grid);
    const auto [red, blue] = gen_polyline_pair(22, 2);
    const auto hits = count_intersections(red, blue);
    ASSERT_EQ(hits.count, 2);
    std::set<int> expect;
    for (const Vec2& p : hits.points) expect.insert(point_to_patch(p, grid));
    EXPECT_GE(expect.size(), 1u);
    EXPECT_LE(expect.size(), 2u);
    EXPECT_EQ(std::set<int>(s.target_patches.begin(), s.target_patches.end()), expect);
    expect_valid_emitted_map(s);
}

TEST(IntersectionSample, AnswerTokenDecodesToCount) {
    for (int count : {0, 1, 2, 3}) {
        const Sample s = make_intersection_sample(33, count);
        const auto parsed = parse_count_answer(s.layout.answer_ids);
        ASSERT_TRUE(parsed.has_value());
        EXPECT_EQ(*parsed, count);
    }
}

TEST(TracingSample, ConnectedPairCoversEdgePatches) {
    const PatchGrid grid(64, 64, 8);
    const GraphScene scene = gen_graph(5);
    const auto [a, b] = scene.edge_endpoints[0];
    const Sample s = make_tracing_sample(5, {a, b}, grid);
    EXPECT_EQ(s.label, "yes");
    ASSERT_EQ(s.layout.answer_ids.size(), 1u);
    EXPECT_EQ(s.layout.answer_ids[0], Vocabulary::kYes);
    expect_valid_emitted_map(s);

    // supersampling oracle along the joining edge
    const Polyline& edge = scene.edges[0];
    std::set<int> oracle;
    for (size_t seg = 0; seg + 1 < edge.vertices.size(); ++seg)
        for (int k = 0; k < 1000; ++k) {
            const double t = static_cast<double>(k) / 999.0;
            oracle.insert(point_to_patch(
                edge.vertices[seg] + t * (edge.vertices[seg + 1] - edge.vertices[seg]), grid));
        }
    const std::set<int> got(s.target_patches.begin(), s.target_patches.end());
    for (int c : oracle) EXPECT_TRUE(got.count(c));
}

TEST(TracingSample, UnconnectedPairIsNoWithNodePatches) {
    const PatchGrid grid(64, 64, 8);
    const GraphScene scene = gen_graph(6);
    int a = -1, b = -1;
    const int n = static_cast<int>(scene.nodes.size());
    for (int i = 0; i < n && a < 0; ++i)
        for (int j = i + 1; j < n; ++j)
            if (!nodes_connected(scene, i, j)) {
                a = i;
                b = j;
                break;
            }
    ASSERT_GE(a, 0);
    const Sample s = make_tracing_sample(6, {a, b}, grid);
    EXPECT_EQ(s.label, "no");
    const std::set<int> expect{
        point_to_patch(scene.nodes[static_cast<size_t>(a)].center, grid),
        point_to_patch(scene.nodes[static_cast<size_t>(b)].center, grid)};
    EXPECT_EQ(std::set<int>(s.target_patches.begin(), s.target_patches.end()), expect);
    expect_valid_emitted_map(s);
}

TEST(TracingSample, YesTargetsAreEightConnected) {
    const PatchGrid grid(64, 64, 8);
    for (uint64_t seed = 0; seed < 25; ++seed) {
        const GraphScene scene = gen_graph(seed);
        const auto [a, b] = scene.edge_endpoints[0];
        const Sample s = make_tracing_sample(seed, {a, b}, grid);
        const std::set<int> cells(s.target_patches.begin(), s.target_patches.end());
        // BFS in the 8-neighborhood of the patch grid
        std::set<int> vis;
        std::queue<int> q;
        q.push(*cells.begin());
        vis.insert(*cells.begin());
        while (!q.empty()) {
            const int cur = q.front();
            q.pop();
            const int r = grid.row_of(cur), c = grid.col_of(cur);
            for (int dr = -1; dr <= 1; ++dr)
                for (int dc = -1; dc <= 1; ++dc) {
                    const int rr = r + dr, cc = c + dc;
                    if (rr < 0 || rr >= grid.rows() || cc < 0 || cc >= grid.cols()) continue;
                    const int idx = grid.index_of(rr, cc);
                    if (cells.count(idx) && !vis.count(idx)) {
                        vis.insert(idx);
                        q.push(idx);
                    }
                }
        }
        EXPECT_EQ(vis, cells) << "seed " << seed;
    }
}

TEST(TracingDataset, YesNoBalancedWithinOne) {
    const auto samples = gen_tracing_dataset(21, 30, 5);
    ASSERT_EQ(samples.size(), 150u);
    int yes = 0, no = 0;
    for (const Sample& s : samples) (s.label == "yes" ? yes : no) += 1;
    EXPECT_LE(std::abs(yes - no), 1);
    // labels re-verify against the scene geometry
    for (const Sample& s : samples) expect_valid_emitted_map(s);
}

TEST(GridpatchSample, AnswerMatchesArgmaxCoordinates) {
    const PatchGrid grid(64, 64, 8);
    bool saw_origin = false;
    for (uint64_t seed = 0; seed < 100; ++seed) {
        const Sample s = make_gridpatch_sample(seed, grid);
        expect_valid_emitted_map(s);
        const auto coords = parse_coord_answer(s.layout.answer_ids);
        ASSERT_TRUE(coords.has_value());
        const int arg = static_cast<int>(argmax_of(s.gt_map.values));
        EXPECT_EQ(coords->first, grid.row_of(arg));
        EXPECT_EQ(coords->second, grid.col_of(arg));
        ASSERT_EQ(s.target_patches.size(), 1u);
        const int cell = s.target_patches[0];
        if (cell == 0) {
            saw_origin = true;
            EXPECT_EQ(coords->first, 0);
            EXPECT_EQ(coords->second, 0);
        }
        // red pixels lie exactly inside the labeled cell
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x) {
                const bool red = s.image.get(x, y) == kRed;
                const bool inside = y / 8 == grid.row_of(cell) && x / 8 == grid.col_of(cell);
                if (red) ASSERT_TRUE(inside);
            }
    }
    EXPECT_TRUE(saw_origin);
}

TEST(DatasetIo, EmptyDatasetRoundTrips) {
    const std::string dir = temp_dir("empty");
    write_dataset({}, dir);
    EXPECT_EQ(slurp(dir + "/manifest.txt"), std::string(kDatasetHeader) + "\n");
    EXPECT_TRUE(read_dataset(dir).empty());
}

TEST(DatasetIo, MixedSamplesRoundTripExactly) {
    const std::string dir = temp_dir("roundtrip");
    std::vector<Sample> samples;
    auto inter = gen_intersection_dataset(7, 40, 0, 3);
    auto trace = gen_tracing_dataset(7, 8, 5);
    auto gridp = gen_gridpatch_dataset(7, 20);
    samples.insert(samples.end(), inter.begin(), inter.end());
    samples.insert(samples.end(), trace.begin(), trace.end());
    samples.insert(samples.end(), gridp.begin(), gridp.end());
    ASSERT_EQ(samples.size(), 100u);

    write_dataset(samples, dir);
    const auto loaded = read_dataset(dir);
    ASSERT_EQ(loaded.size(), samples.size());
    for (size_t i = 0; i < samples.size(); ++i) {
        EXPECT_EQ(loaded[i].id, samples[i].id);
        EXPECT_EQ(loaded[i].task, samples[i].task);
        EXPECT_EQ(loaded[i].image_path, samples[i].image_path);
        EXPECT_TRUE(loaded[i].layout == samples[i].layout);
        EXPECT_EQ(loaded[i].target_patches, samples[i].target_patches);
        EXPECT_EQ(loaded[i].gt_map.values, samples[i].gt_map.values);  // exact
        EXPECT_EQ(loaded[i].label, samples[i].label);
        EXPECT_EQ(loaded[i].seed, samples[i].seed);
        EXPECT_TRUE(loaded[i].image == samples[i].image);
    }
}

TEST(DatasetIo, RegenerationIsByteIdentical) {
    const std::string dir1 = temp_dir("gen1"), dir2 = temp_dir("gen2");
    write_dataset(gen_intersection_dataset(123, 12, 0, 3), dir1);
    write_dataset(gen_intersection_dataset(123, 12, 0, 3), dir2);
    EXPECT_EQ(slurp(dir1 + "/manifest.txt"), slurp(dir2 + "/manifest.txt"));
    for (const auto& entry : std::filesystem::directory_iterator(dir1 + "/images"))
        EXPECT_EQ(slurp(entry.path().string()),
                  slurp(dir2 + "/images/" + entry.path().filename().string()));
}

TEST(DatasetIo, TruncatedLineNamesLineNumber) {
    const std::string dir = temp_dir("broken");
    write_dataset(gen_gridpatch_dataset(1, 3), dir);
    // chop fields off the third record (line 4 of the file)
    std::ifstream in(dir + "/manifest.txt");
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    in.close();
    lines[3] = lines[3].substr(0, lines[3].find('\t', 30));
    std::ofstream out(dir + "/manifest.txt", std::ios::binary);
    for (const auto& l : lines) out << l << "\n";
    out.close();
    try {
        read_dataset(dir);
        FAIL() << "expected malformed-line error";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos) << e.what();
    }
}

TEST(DatasetIo, VersionMismatchRejected) {
    const std::string dir = temp_dir("version");
    write_dataset({}, dir);
    std::ofstream out(dir + "/manifest.txt", std::ios::binary);
    out << "klal-dataset v9\n";
    out.close();
    try {
        read_dataset(dir);
        FAIL() << "expected version error";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
    }
}
