// Shared utilities: deterministic RNG, seed derivation, worker-count control
// and the flat key=value text format used by configs, reports and checkpoints.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace klal {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derive an independent stream seed from a base seed and a tag.
inline uint64_t mix_seed(uint64_t seed, uint64_t tag) {
    return splitmix64(splitmix64(seed) ^ splitmix64(tag ^ 0xa0761d6478bd642fULL));
}

inline uint64_t mix_seed(uint64_t seed, uint64_t tag_a, uint64_t tag_b) {
    return mix_seed(mix_seed(seed, tag_a), tag_b);
}

// mt19937_64 core with hand-rolled distribution transforms. The engine is
// fully specified by the standard; the std:: distributions are not, so the
// transforms live here to keep generated bytes stable.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive range, unbiased via rejection
    int64_t uniform_int(int64_t lo, int64_t hi) {
        if (lo > hi) throw std::invalid_argument("Rng::uniform_int: empty range");
        const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        if (span == 0) return static_cast<int64_t>(next_u64());  // full 64-bit range
        const uint64_t reject_below = (0 - span) % span;
        uint64_t r = next_u64();
        while (r < reject_below) r = next_u64();
        return lo + static_cast<int64_t>(r % span);
    }

    double normal(double mu = 0.0, double sigma = 1.0) {
        if (has_spare_) {
            has_spare_ = false;
            return mu + sigma * spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return mu + sigma * r * std::cos(a);
    }

    bool coin() { return (next_u64() & 1u) != 0; }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

    template <class T>
    const T& choice(const std::vector<T>& v) {
        if (v.empty()) throw std::invalid_argument("Rng::choice: empty");
        return v[static_cast<size_t>(uniform_int(0, static_cast<int64_t>(v.size()) - 1))];
    }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Worker count for sample-level parallelism. KLAL_THREADS caps it; results
// do not depend on it (all gradient merges are order-fixed).
inline int worker_count() {
#ifdef _OPENMP
    int n = omp_get_max_threads();
#else
    int n = 1;
#endif
    if (const char* env = std::getenv("KLAL_THREADS")) {
        const long cap = std::strtol(env, nullptr, 10);
        if (cap >= 1 && cap < n) n = static_cast<int>(cap);
    }
    return std::max(1, n);
}

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Ordered flat key=value text. Writers emit keys in a fixed order so the
// serialized form is stable and diffable.
class TextKv {
public:
    void set(const std::string& key, const std::string& value) {
        for (auto& kv : items_) {
            if (kv.first == key) {
                kv.second = value;
                return;
            }
        }
        items_.emplace_back(key, value);
    }
    void set_i64(const std::string& key, int64_t v) { set(key, std::to_string(v)); }
    void set_u64(const std::string& key, uint64_t v) { set(key, std::to_string(v)); }
    void set_f64(const std::string& key, double v) { set(key, format_double(v)); }

    bool has(const std::string& key) const {
        for (const auto& kv : items_)
            if (kv.first == key) return true;
        return false;
    }

    const std::string& get(const std::string& key) const {
        for (const auto& kv : items_)
            if (kv.first == key) return kv.second;
        throw std::runtime_error("TextKv: missing key '" + key + "'");
    }

    int64_t get_i64(const std::string& key) const { return std::stoll(get(key)); }
    uint64_t get_u64(const std::string& key) const { return std::stoull(get(key)); }
    double get_f64(const std::string& key) const { return std::strtod(get(key).c_str(), nullptr); }

    const std::vector<std::pair<std::string, std::string>>& items() const { return items_; }

    std::string serialize() const {
        std::string out;
        for (const auto& kv : items_) {
            out += kv.first;
            out += '=';
            out += kv.second;
            out += '\n';
        }
        return out;
    }

    static TextKv parse(const std::string& text) {
        TextKv kv;
        std::istringstream in(text);
        std::string line;
        size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty() || line[0] == '#') continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw std::runtime_error("TextKv: malformed line " + std::to_string(lineno) +
                                         ": '" + line + "'");
            kv.set(line.substr(0, eq), line.substr(eq + 1));
        }
        return kv;
    }

private:
    std::vector<std::pair<std::string, std::string>> items_;
};

}  // namespace klal
