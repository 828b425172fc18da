#include "ovhhir/common.hpp"

#include <cctype>
#include <cmath>

namespace ovhhir {

std::string hex64(uint64_t v) {
    static const char * digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; i--) {
        out[i] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

double Rng::gaussian() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // Box-Muller; reject u1 == 0 so log() stays finite.
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
}

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
    if (lo > hi) {
        throw config_error("uniform_int: empty range");
    }
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    // modulo bias is irrelevant at desk scale, but rejection is cheap
    uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    uint64_t v = 0;
    do {
        v = next_u64();
    } while (v >= limit);
    return lo + static_cast<int64_t>(v % span);
}

std::string lowercase(const std::string & s) {
    std::string out = s;
    for (auto & c : out) {
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return out;
}

std::string trim(const std::string & s) {
    size_t b = 0;
    size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) {
        b++;
    }
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) {
        e--;
    }
    return s.substr(b, e - b);
}

std::string collapse_whitespace(const std::string & s) {
    std::string out;
    out.reserve(s.size());
    bool in_ws = false;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            in_ws = true;
            continue;
        }
        if (in_ws && !out.empty()) {
            out.push_back(' ');
        }
        in_ws = false;
        out.push_back(c);
    }
    return out;
}

std::vector<std::string> split_words(const std::string & s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!cur.empty()) {
                out.push_back(cur);
                cur.clear();
            }
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) {
        out.push_back(cur);
    }
    return out;
}

} // namespace ovhhir
