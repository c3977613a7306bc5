#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace shiftforge {

// Error hierarchy. Everything user-visible derives from Error so the CLI can
// catch one type and print a clean message.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error("shape error: " + msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error("numeric error: " + msg) {}
};

struct IndexError : Error {
    explicit IndexError(const std::string& msg) : Error("index error: " + msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error("io error: " + msg) {}
};

struct PackError : Error {
    explicit PackError(const std::string& msg) : Error("pack error: " + msg) {}
};

struct OverflowError : Error {
    explicit OverflowError(const std::string& msg) : Error("overflow error: " + msg) {}
};

struct GraphError : Error {
    explicit GraphError(const std::string& msg) : Error("graph error: " + msg) {}
};

// Deterministic RNG. Distributions are hand-rolled on top of mt19937 so that
// streams are identical across standard libraries; state round-trips through
// text for checkpointing.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : gen_(static_cast<std::mt19937::result_type>(seed)) {}

    uint32_t next_u32() { return gen_(); }

    // uniform in [lo, hi) with 24 bits of mantissa
    float uniform(float lo, float hi) {
        float u = static_cast<float>(gen_() >> 8) * (1.0f / 16777216.0f);
        return lo + (hi - lo) * u;
    }

    // Box-Muller, one value per call (spare cached)
    float normal(float mean = 0.0f, float stddev = 1.0f) {
        if (has_spare_) {
            has_spare_ = false;
            return mean + stddev * spare_;
        }
        float u1, u2;
        do {
            u1 = uniform(0.0f, 1.0f);
        } while (u1 <= 1e-12f);
        u2 = uniform(0.0f, 1.0f);
        float r = std::sqrt(-2.0f * std::log(u1));
        float a = 6.28318530717958647692f * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return mean + stddev * (r * std::cos(a));
    }

    // integer in [0, n)
    size_t index(size_t n) {
        // rejection-free modulo is fine here; n is tiny vs 2^32
        return static_cast<size_t>(gen_()) % n;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    std::string save_state() const {
        std::ostringstream os;
        os << gen_ << ' ' << (has_spare_ ? 1 : 0) << ' ' << spare_;
        return os.str();
    }

    void load_state(const std::string& s) {
        std::istringstream is(s);
        int hs = 0;
        is >> gen_ >> hs >> spare_;
        if (!is) throw IoError("bad rng state string");
        has_spare_ = (hs != 0);
    }

private:
    std::mt19937 gen_;
    bool has_spare_ = false;
    float spare_ = 0.0f;
};

}  // namespace shiftforge
