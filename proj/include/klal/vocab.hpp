// Fixed tiny vocabulary shared by all tasks. Id 0 is PAD; the table is
// bijective and never changes at runtime.
#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace klal {

class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kSep = 3;
    static constexpr int kYes = 4;
    static constexpr int kNo = 5;
    static constexpr int kDigitBase = 6;       // '0'..'9' -> 6..15
    static constexpr int kNodeBase = 16;       // 'A'..'G' -> 16..22
    static constexpr int kCoordBase = 23;      // grid coordinates 0..15 -> 23..38
    static constexpr int kCoordCount = 16;
    static constexpr int kAskIntersections = 39;
    static constexpr int kAskConnected = 40;
    static constexpr int kAskCell = 41;

    static constexpr int size() { return 42; }

    static int digit_token(int d) {
        if (d < 0 || d > 9) throw std::invalid_argument("vocab: digit out of range");
        return kDigitBase + d;
    }
    static int node_token(char label) {
        if (label < 'A' || label > 'G') throw std::invalid_argument("vocab: node label out of range");
        return kNodeBase + (label - 'A');
    }
    static int coord_token(int k) {
        if (k < 0 || k >= kCoordCount) throw std::invalid_argument("vocab: coord out of range");
        return kCoordBase + k;
    }

    static std::optional<int> digit_value(int id) {
        if (id >= kDigitBase && id < kDigitBase + 10) return id - kDigitBase;
        return std::nullopt;
    }
    static std::optional<int> coord_value(int id) {
        if (id >= kCoordBase && id < kCoordBase + kCoordCount) return id - kCoordBase;
        return std::nullopt;
    }
    static std::optional<char> node_label(int id) {
        if (id >= kNodeBase && id < kNodeBase + 7) return static_cast<char>('A' + id - kNodeBase);
        return std::nullopt;
    }

    static std::string name(int id) {
        switch (id) {
            case kPad: return "<pad>";
            case kBos: return "<bos>";
            case kEos: return "<eos>";
            case kSep: return "<sep>";
            case kYes: return "yes";
            case kNo: return "no";
            case kAskIntersections: return "<ask-intersections>";
            case kAskConnected: return "<ask-connected>";
            case kAskCell: return "<ask-cell>";
            default: break;
        }
        if (auto d = digit_value(id)) return std::string(1, static_cast<char>('0' + *d));
        if (auto n = node_label(id)) return std::string(1, *n);
        if (auto c = coord_value(id)) return "@" + std::to_string(*c);
        throw std::invalid_argument("vocab: unknown token id " + std::to_string(id));
    }
};

// --- answer parsing (unparseable answers score as incorrect upstream) -------

inline std::optional<int> parse_count_answer(const std::vector<int>& ids) {
    if (ids.empty()) return std::nullopt;
    return Vocabulary::digit_value(ids[0]);
}

inline std::optional<bool> parse_yesno_answer(const std::vector<int>& ids) {
    if (ids.empty()) return std::nullopt;
    if (ids[0] == Vocabulary::kYes) return true;
    if (ids[0] == Vocabulary::kNo) return false;
    return std::nullopt;
}

inline std::optional<std::pair<int, int>> parse_coord_answer(const std::vector<int>& ids) {
    if (ids.size() < 2) return std::nullopt;
    const auto r = Vocabulary::coord_value(ids[0]);
    const auto c = Vocabulary::coord_value(ids[1]);
    if (!r || !c) return std::nullopt;
    return std::make_pair(*r, *c);
}

}  // namespace klal
