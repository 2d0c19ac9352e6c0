#include "kikuchi/tensor.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <string>

#include "kikuchi/error.hpp"
#include "kikuchi/rng.hpp"

namespace kikuchi {

namespace {

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

constexpr std::array<char, 16> kMagic{'K', 'I', 'K', 'T', 'E', 'N', 'S', 'R'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint64_t kHeaderBytes = 48;
constexpr std::uint64_t kMaxEntries = std::uint64_t{1} << 31;

std::uint64_t entry_count(std::uint32_t n, std::uint32_t r) {
    const BigInt c = binomial(n, r);
    if (c > kMaxEntries)
        throw ResourceLimit("tensor with C(" + std::to_string(n) + ", " + std::to_string(r) + ") = " + c.str() +
                            " entries exceeds the in-memory limit");
    return c.convert_to<std::uint64_t>();
}

void check_shape(std::uint32_t n, std::uint32_t r) {
    if (r < 3) throw InvalidArgument("tensor order must be at least 3, got " + std::to_string(r));
    if (n < r)
        throw InvalidArgument("tensor dimension n = " + std::to_string(n) + " is smaller than order r = " +
                              std::to_string(r));
}

template <class T>
void put(std::ofstream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

class Reader {
public:
    Reader(std::ifstream& in, std::uint64_t file_size) : in_(in), size_(file_size) {}

    template <class T>
    T get(const char* field) {
        T value{};
        if (offset_ + sizeof(T) > size_) throw FormatError(std::string("truncated file reading ") + field, offset_);
        in_.read(reinterpret_cast<char*>(&value), sizeof(T));
        offset_ += sizeof(T);
        return value;
    }

    void bytes(char* dst, std::uint64_t count, const char* field) {
        if (offset_ + count > size_) throw FormatError(std::string("truncated file reading ") + field, size_);
        in_.read(dst, static_cast<std::streamsize>(count));
        offset_ += count;
    }

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::ifstream& in_;
    std::uint64_t size_;
    std::uint64_t offset_ = 0;
};

} // namespace

std::string_view to_string(Distribution d) noexcept {
    switch (d) {
    case Distribution::gaussian: return "gaussian";
    case Distribution::rademacher: return "rademacher";
    case Distribution::planted_gaussian: return "planted-over-gaussian";
    case Distribution::planted_rademacher: return "planted-over-rademacher";
    }
    return "unknown";
}

Distribution parse_distribution(std::string_view name) {
    for (auto d : {Distribution::gaussian, Distribution::rademacher, Distribution::planted_gaussian,
                   Distribution::planted_rademacher})
        if (name == to_string(d)) return d;
    throw InvalidArgument("unknown distribution '" + std::string(name) + "'");
}

Distribution base_noise(Distribution d) noexcept {
    return d == Distribution::rademacher || d == Distribution::planted_rademacher ? Distribution::rademacher
                                                                                  : Distribution::gaussian;
}

SymmetricTensor::SymmetricTensor(std::uint32_t n, std::uint32_t r, Distribution dist, std::uint64_t seed)
    : SymmetricTensor(n, r, dist, seed, {}) {}

SymmetricTensor::SymmetricTensor(std::uint32_t n, std::uint32_t r, Distribution dist, std::uint64_t seed,
                                 std::vector<double> entries)
    : n_(n), r_(r), dist_(dist), seed_(seed), binom_((check_shape(n, r), n), r), entries_(std::move(entries)) {
    const std::uint64_t count = entry_count(n, r);
    if (entries_.empty()) entries_.assign(count, 0.0);
    if (entries_.size() != count)
        throw InvalidArgument("tensor needs " + std::to_string(count) + " entries, got " +
                              std::to_string(entries_.size()));
}

std::uint64_t SymmetricTensor::checked_rank(const Subset& s) const {
    if (s.size() != r_ || s.n() != n_)
        throw InvalidArgument("tensor index must be a " + std::to_string(r_) + "-subset of [" + std::to_string(n_) +
                              "], got size " + std::to_string(s.size()));
    return binom_.rank(s.elements());
}

double SymmetricTensor::entry(const Subset& s) const { return entries_[checked_rank(s)]; }

void SymmetricTensor::set_entry(const Subset& s, double value) { entries_[checked_rank(s)] = value; }

bool Spike::is_boolean() const noexcept {
    return std::all_of(v.begin(), v.end(), [](double x) { return x == 1.0 || x == -1.0; });
}

std::vector<double> sample_spike_vector(std::uint32_t n, Prior prior, std::uint64_t seed) {
    CounterRng rng(hash64({seed, 0x7370696b65ULL}));
    std::vector<double> v(n);
    for (std::uint32_t i = 0; i < n; ++i) v[i] = prior == Prior::rademacher ? rng.sign(i) : rng.normal(i);
    return v;
}

SymmetricTensor sample_tensor(std::uint32_t n, std::uint32_t r, Distribution dist, std::uint64_t seed) {
    if (dist != Distribution::gaussian && dist != Distribution::rademacher)
        throw InvalidArgument("sample_tensor draws pure noise; use add_spike for planted instances");
    SymmetricTensor t(n, r, dist, seed);
    CounterRng rng(seed);
    auto e = t.entries();
    if (dist == Distribution::gaussian)
        for (std::uint64_t k = 0; k < e.size(); ++k) e[k] = rng.normal(k);
    else
        for (std::uint64_t k = 0; k < e.size(); ++k) e[k] = rng.sign(k);
    return t;
}

namespace {

// Calls f(rank, prod_{i in S} v_i) for every r-subset S in colex order.
template <class F>
void for_each_sign_product(std::uint32_t n, std::uint32_t r, std::span<const double> v, F&& f) {
    std::vector<std::uint32_t> s(r);
    for (std::uint32_t i = 0; i < r; ++i) s[i] = i;
    std::uint64_t rank = 0;
    while (true) {
        double p = 1.0;
        for (auto i : s) p *= v[i];
        f(rank++, p);
        // Next combination in colex order: bump the lowest element that can move.
        std::uint32_t j = 0;
        while (j + 1 < r && s[j] + 1 == s[j + 1]) {
            s[j] = j;
            ++j;
        }
        if (++s[j] >= n) break;
    }
}

} // namespace

SymmetricTensor add_spike(const SymmetricTensor& g, const Spike& spike) {
    if (spike.v.size() != g.n())
        throw InvalidArgument("spike vector has length " + std::to_string(spike.v.size()) + ", tensor has n = " +
                              std::to_string(g.n()));
    const Distribution tag = base_noise(g.distribution()) == Distribution::rademacher
                                 ? Distribution::planted_rademacher
                                 : Distribution::planted_gaussian;
    std::vector<double> out(g.entries().begin(), g.entries().end());
    for_each_sign_product(g.n(), g.order(), spike.v,
                          [&](std::uint64_t k, double p) { out[k] += spike.lambda * p; });
    return SymmetricTensor(g.n(), g.order(), tag, g.seed(), std::move(out));
}

SymmetricTensor signal_tensor(std::uint32_t n, std::uint32_t r, const Spike& spike) {
    return add_spike(SymmetricTensor(n, r, Distribution::gaussian, 0), spike);
}

void save_tensor(const SymmetricTensor& t, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidArgument("cannot open '" + path.string() + "' for writing");
    out.write(kMagic.data(), kMagic.size());
    put<std::uint32_t>(out, kVersion);
    put<std::uint32_t>(out, t.n());
    put<std::uint32_t>(out, t.order());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.distribution()));
    put<std::uint64_t>(out, t.seed());
    put<std::uint64_t>(out, t.size());
    out.write(reinterpret_cast<const char*>(t.entries().data()), static_cast<std::streamsize>(t.size() * 8));
    if (!out) throw InvalidArgument("write to '" + path.string() + "' failed");
}

SymmetricTensor load_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path.string() + "'", 0);
    std::error_code ec;
    const auto file_size = std::filesystem::file_size(path, ec);
    if (ec) throw FormatError("cannot stat '" + path.string() + "'", 0);
    Reader rd(in, file_size);

    std::array<char, 16> magic{};
    rd.bytes(magic.data(), magic.size(), "magic");
    if (magic != kMagic) throw FormatError("bad magic, not a KIKTENSR file", 0);

    const auto version = rd.get<std::uint32_t>("version");
    if (version != kVersion) throw FormatError("unsupported version " + std::to_string(version), 16);
    const auto n = rd.get<std::uint32_t>("n");
    const auto r = rd.get<std::uint32_t>("r");
    if (r < 3 || r > n)
        throw FormatError("invalid header: n = " + std::to_string(n) + ", r = " + std::to_string(r), 24);
    const auto dist_code = rd.get<std::uint32_t>("distribution");
    if (dist_code > 3) throw FormatError("unknown distribution code " + std::to_string(dist_code), 28);
    const auto seed = rd.get<std::uint64_t>("seed");
    const auto count = rd.get<std::uint64_t>("entry count");
    const BigInt expected = binomial(n, r);
    if (BigInt(count) != expected)
        throw FormatError("entry count " + std::to_string(count) + " does not match C(n, r) = " + expected.str(), 40);
    if (file_size != kHeaderBytes + 8 * count) {
        const std::uint64_t at = std::min<std::uint64_t>(file_size, kHeaderBytes + 8 * count);
        throw FormatError(file_size < kHeaderBytes + 8 * count ? "truncated entry data" : "trailing bytes after entries",
                          at);
    }
    std::vector<double> entries(count);
    rd.bytes(reinterpret_cast<char*>(entries.data()), 8 * count, "entries");
    return SymmetricTensor(n, r, static_cast<Distribution>(dist_code), seed, std::move(entries));
}

} // namespace kikuchi
