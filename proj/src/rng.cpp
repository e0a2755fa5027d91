#include "mfg/rng.hpp"

#include <cmath>

namespace mfg {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

std::uint64_t stream_key(const RandomStream& s) {
    std::uint64_t k = splitmix64(s.seed);
    k = splitmix64(k ^ fnv1a64(s.label));
    k = splitmix64(k ^ (s.index * 0xD1B54A32D192ED03ull));
    return k;
}

constexpr std::uint64_t kReaderSlot = std::uint64_t(1) << 63;
constexpr double kTwoPi = 6.283185307179586476925286766559;

inline double to_open_unit(std::uint64_t w) {
    // 53 random bits mapped into (0,1), never 0 or 1.
    return (static_cast<double>(w >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace

std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

RandomStream RandomStream::child(std::string_view suffix, std::uint64_t i) const {
    std::string l = label;
    l += '/';
    l += suffix;
    l += '#';
    l += std::to_string(index);
    return RandomStream(seed, std::move(l), i);
}

void philox4x32(std::uint64_t key, std::uint64_t ctr_hi, std::uint64_t ctr_lo, std::uint32_t out[4]) {
    std::uint32_t c0 = static_cast<std::uint32_t>(ctr_lo);
    std::uint32_t c1 = static_cast<std::uint32_t>(ctr_lo >> 32);
    std::uint32_t c2 = static_cast<std::uint32_t>(ctr_hi);
    std::uint32_t c3 = static_cast<std::uint32_t>(ctr_hi >> 32);
    std::uint32_t k0 = static_cast<std::uint32_t>(key);
    std::uint32_t k1 = static_cast<std::uint32_t>(key >> 32);
    for (int r = 0; r < 10; ++r) {
        const std::uint64_t p0 = std::uint64_t(0xD2511F53u) * c0;
        const std::uint64_t p1 = std::uint64_t(0xCD9E8D57u) * c2;
        const std::uint32_t n0 = static_cast<std::uint32_t>(p1 >> 32) ^ c1 ^ k0;
        const std::uint32_t n1 = static_cast<std::uint32_t>(p1);
        const std::uint32_t n2 = static_cast<std::uint32_t>(p0 >> 32) ^ c3 ^ k1;
        const std::uint32_t n3 = static_cast<std::uint32_t>(p0);
        c0 = n0;
        c1 = n1;
        c2 = n2;
        c3 = n3;
        k0 += 0x9E3779B9u;
        k1 += 0xBB67AE85u;
    }
    out[0] = c0;
    out[1] = c1;
    out[2] = c2;
    out[3] = c3;
}

StreamReader::StreamReader(const RandomStream& s, std::uint64_t start) : key_(stream_key(s)), index_(s.index) {
    seek(start);
}

void StreamReader::seek(std::uint64_t pos) {
    pos_ = pos;
    has_spare_ = false;
}

std::uint64_t StreamReader::next_word() {
    const std::uint64_t b = pos_ / 2;
    if (b != block_id_) {
        philox4x32(key_, kReaderSlot, b, block_);
        block_id_ = b;
    }
    const int off = static_cast<int>(pos_ % 2) * 2;
    ++pos_;
    return (std::uint64_t(block_[off + 1]) << 32) | block_[off];
}

double StreamReader::uniform() { return to_open_unit(next_word()); }

double StreamReader::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double StreamReader::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(kTwoPi * u2);
    has_spare_ = true;
    return r * std::cos(kTwoPi * u2);
}

void fill_normals(const RandomStream& s, std::uint64_t slot, double* out, std::size_t n) {
    const std::uint64_t key = stream_key(s);
    std::uint32_t blk[4];
    for (std::size_t b = 0; 2 * b < n; ++b) {
        philox4x32(key, slot, b, blk);
        const double u1 = to_open_unit((std::uint64_t(blk[1]) << 32) | blk[0]);
        const double u2 = to_open_unit((std::uint64_t(blk[3]) << 32) | blk[2]);
        const double r = std::sqrt(-2.0 * std::log(u1));
        out[2 * b] = r * std::cos(kTwoPi * u2);
        if (2 * b + 1 < n) out[2 * b + 1] = r * std::sin(kTwoPi * u2);
    }
}

}  // namespace mfg
