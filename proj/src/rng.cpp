#include "gic/rng.hpp"

#include "gic/errors.hpp"

namespace gic {

std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
    return splitmix64(seed ^ fnv1a64(tag));
}

std::vector<int> shuffled_indices(int n, Rng& rng) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    for (int i = n - 1; i > 0; --i) {
        std::uniform_int_distribution<int> pick(0, i);
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
    }
    return idx;
}

std::vector<int> sample_without_replacement(const std::vector<int>& pool, int k, Rng& rng) {
    if (k < 0 || static_cast<std::size_t>(k) > pool.size())
        throw IndexError("sample_without_replacement: requested " + std::to_string(k) +
                         " from pool of " + std::to_string(pool.size()));
    std::vector<int> copy = pool;
    // partial Fisher-Yates: fill positions [0, k)
    for (int i = 0; i < k; ++i) {
        std::uniform_int_distribution<int> pick(i, static_cast<int>(copy.size()) - 1);
        std::swap(copy[static_cast<std::size_t>(i)], copy[static_cast<std::size_t>(pick(rng))]);
    }
    copy.resize(static_cast<std::size_t>(k));
    return copy;
}

std::vector<int> sample_with_replacement(const std::vector<int>& pool, int k, Rng& rng) {
    if (pool.empty()) throw IndexError("sample_with_replacement: empty pool");
    if (k < 0) throw IndexError("sample_with_replacement: negative count");
    std::vector<int> out(static_cast<std::size_t>(k));
    std::uniform_int_distribution<int> pick(0, static_cast<int>(pool.size()) - 1);
    for (int i = 0; i < k; ++i) out[static_cast<std::size_t>(i)] = pool[static_cast<std::size_t>(pick(rng))];
    return out;
}

} // namespace gic
