#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "gic/dataset.hpp"

namespace gic {

/// Train/validation/test triple. The validation split doubles as comparison
/// data in the benchmark pipelines.
struct DatasetSplits {
    LabeledDataset train;
    LabeledDataset val;
    LabeledDataset test;
};

/// Two-feature Gaussian benchmark with four groups. x0 carries the spurious
/// attribute (a = 0 at mean 4, a = 1 at mean 8) and x1 carries the label
/// (y = 0 at mean 5, y = 1 at mean 8); covariance is the identity. Group
/// order below is g0=(y0,a0), g1=(y0,a1), g2=(y1,a0), g3=(y1,a1).
struct Toy2dSpec {
    struct GroupSpec {
        double mean_x0, mean_x1;
        int label;
        long n_train, n_val, n_test;
    };
    // n_train counts make the spurious and invariant feature equally
    // predictive on the training split (39:1 majority/minority), while the
    // validation counts are closer to balanced.
    std::array<GroupSpec, 4> groups = {{
        {4.0, 5.0, 0, 3900, 854, 3000},
        {4.0, 8.0, 1, 100, 287, 3000},
        {8.0, 8.0, 1, 3900, 18, 3000},
        {8.0, 5.0, 0, 100, 828, 3000},
    }};
};

DatasetSplits gen_toy2d(const Toy2dSpec& spec, std::uint64_t seed);

/// Synthetic spurious-correlation benchmark in feature space. Each sample
/// belongs to a group (y, a); the invariant feature block depends on a latent
/// class that equals y except for label noise, the spurious block depends
/// only on a. Coordinate 0 of each block carries the class/attribute mean
/// (signal * value), the remaining coordinates are N(0,1) noise.
struct SynthSpuriousSpec {
    int class_count = 2;
    int spurious_arity = 2;
    int invariant_dim = 2;
    int spurious_dim = 2;
    double signal = 4.0;
    double label_flip = 0.25;  // applied after features are drawn
    long n_train = 30000, n_val = 10000, n_test = 20000;
    // group fractions over g = y*A + a, one vector per split
    std::vector<double> train_fractions = {0.1, 0.4, 0.4, 0.1};
    std::vector<double> val_fractions = {0.26, 0.25, 0.25, 0.24};
    std::vector<double> test_fractions = {0.45, 0.05, 0.05, 0.45};
};

DatasetSplits gen_synth_spurious(const SynthSpuriousSpec& spec, std::uint64_t seed);

} // namespace gic
