#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace mfg {

// Counter-based stream: every draw is a pure function of (seed, label, index, counter).
struct RandomStream {
    std::uint64_t seed = 0;
    std::string label;
    std::uint64_t index = 0;

    RandomStream() = default;
    RandomStream(std::uint64_t s, std::string l, std::uint64_t i = 0) : seed(s), label(std::move(l)), index(i) {}

    RandomStream child(std::string_view suffix, std::uint64_t i) const;
    RandomStream with_index(std::uint64_t i) const { return RandomStream(seed, label, i); }
};

std::uint64_t fnv1a64(std::string_view text);

// Philox4x32-10 block for a 128-bit counter under a 64-bit key.
void philox4x32(std::uint64_t key, std::uint64_t ctr_hi, std::uint64_t ctr_lo, std::uint32_t out[4]);

// Sequential reader over a stream. Draw k of the reader is fixed by k alone.
class StreamReader {
public:
    explicit StreamReader(const RandomStream& s, std::uint64_t start = 0);

    double uniform();            // in (0, 1)
    double uniform(double lo, double hi);
    double normal();
    std::uint64_t position() const { return pos_; }
    void seek(std::uint64_t pos);

private:
    std::uint64_t key_;
    std::uint64_t index_;
    std::uint64_t pos_ = 0;  // counts 64-bit words
    std::uint32_t block_[4]{};
    std::uint64_t block_id_ = ~std::uint64_t(0);
    bool has_spare_ = false;
    double spare_ = 0.0;

    std::uint64_t next_word();
};

// Fills out[0..n) with N(0,1) draws for counter window `slot` of the stream.
void fill_normals(const RandomStream& s, std::uint64_t slot, double* out, std::size_t n);

}  // namespace mfg
