#include "gic/generators.hpp"

#include <cmath>

#include "gic/errors.hpp"

namespace gic {

namespace {

// Applies a seeded permutation so samples are not grouped by construction
// order. Works in place.
void shuffle_rows(LabeledDataset& ds, Rng& rng) {
    const auto order = shuffled_indices(ds.size(), rng);
    LabeledDataset shuffled = subset(ds, order);
    ds = std::move(shuffled);
}

} // namespace

DatasetSplits gen_toy2d(const Toy2dSpec& spec, std::uint64_t seed) {
    DatasetSplits splits;
    const char* split_names[3] = {"toy2d-train", "toy2d-val", "toy2d-test"};
    LabeledDataset* out[3] = {&splits.train, &splits.val, &splits.test};

    for (int s = 0; s < 3; ++s) {
        Rng rng = make_rng(derive_seed(seed, std::string("toy2d/") + split_names[s]));
        std::normal_distribution<double> unit(0.0, 1.0);

        long total = 0;
        for (const auto& g : spec.groups) total += (s == 0 ? g.n_train : s == 1 ? g.n_val : g.n_test);

        LabeledDataset& ds = *out[s];
        ds.name = split_names[s];
        ds.class_count = 2;
        ds.spurious_arity = 2;
        ds.features.resize(total, 2);
        ds.labels.resize(static_cast<std::size_t>(total));
        ds.spurious.resize(static_cast<std::size_t>(total));

        long row = 0;
        for (const auto& g : spec.groups) {
            const long count = (s == 0 ? g.n_train : s == 1 ? g.n_val : g.n_test);
            const int attr = (g.mean_x0 == 4.0) ? 0 : 1;
            for (long i = 0; i < count; ++i, ++row) {
                ds.features(row, 0) = g.mean_x0 + unit(rng);
                ds.features(row, 1) = g.mean_x1 + unit(rng);
                ds.labels[static_cast<std::size_t>(row)] = g.label;
                ds.spurious[static_cast<std::size_t>(row)] = attr;
            }
        }
        derive_group_ids(ds);
        shuffle_rows(ds, rng);
        validate(ds);
    }
    return splits;
}

DatasetSplits gen_synth_spurious(const SynthSpuriousSpec& spec, std::uint64_t seed) {
    if (spec.class_count < 2 || spec.spurious_arity < 2)
        throw ConfigError("gen_synth_spurious: need at least 2 classes and 2 attribute values");
    if (spec.invariant_dim < 1 || spec.spurious_dim < 1)
        throw ConfigError("gen_synth_spurious: block dims must be positive");
    if (spec.label_flip < 0.0 || spec.label_flip >= 0.5)
        throw ConfigError("gen_synth_spurious: label_flip must be in [0, 0.5)");
    const std::size_t n_groups = static_cast<std::size_t>(spec.class_count * spec.spurious_arity);
    for (const auto* f : {&spec.train_fractions, &spec.val_fractions, &spec.test_fractions})
        if (f->size() != n_groups)
            throw ConfigError("gen_synth_spurious: fraction vector length != class_count*spurious_arity");

    DatasetSplits splits;
    const char* split_names[3] = {"synth-train", "synth-val", "synth-test"};
    LabeledDataset* out[3] = {&splits.train, &splits.val, &splits.test};
    const std::vector<double>* fracs[3] = {&spec.train_fractions, &spec.val_fractions, &spec.test_fractions};
    const long sizes[3] = {spec.n_train, spec.n_val, spec.n_test};
    const int d = spec.invariant_dim + spec.spurious_dim;

    for (int s = 0; s < 3; ++s) {
        Rng rng = make_rng(derive_seed(seed, std::string("synth/") + split_names[s]));
        std::normal_distribution<double> unit(0.0, 1.0);
        std::uniform_real_distribution<double> coin(0.0, 1.0);

        const auto counts = largest_remainder_counts(*fracs[s], sizes[s]);
        LabeledDataset& ds = *out[s];
        ds.name = split_names[s];
        ds.class_count = spec.class_count;
        ds.spurious_arity = spec.spurious_arity;
        ds.features.resize(sizes[s], d);
        ds.labels.resize(static_cast<std::size_t>(sizes[s]));
        ds.spurious.resize(static_cast<std::size_t>(sizes[s]));

        long row = 0;
        for (std::size_t g = 0; g < n_groups; ++g) {
            const int y = static_cast<int>(g) / spec.spurious_arity;
            const int a = static_cast<int>(g) % spec.spurious_arity;
            for (long i = 0; i < counts[g]; ++i, ++row) {
                // the observed label is y; the invariant block reflects a
                // latent class that disagrees with y at the flip rate
                const int latent = (coin(rng) < spec.label_flip) ? (y + 1) % spec.class_count : y;
                for (int c = 0; c < spec.invariant_dim; ++c)
                    ds.features(row, c) = (c == 0 ? spec.signal * latent : 0.0) + unit(rng);
                for (int c = 0; c < spec.spurious_dim; ++c)
                    ds.features(row, spec.invariant_dim + c) = (c == 0 ? spec.signal * a : 0.0) + unit(rng);
                ds.labels[static_cast<std::size_t>(row)] = y;
                ds.spurious[static_cast<std::size_t>(row)] = a;
            }
        }
        derive_group_ids(ds);
        shuffle_rows(ds, rng);
        validate(ds);
    }
    return splits;
}

} // namespace gic
