#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gic/rng.hpp"

namespace gic {

/// In-memory dataset. Features are n x d row-major in spirit (one sample per
/// row). labels/spurious/group_ids are optional columns: an empty vector
/// means "absent". When both labels and spurious are present, group ids obey
/// g = y * spurious_arity + a.
struct LabeledDataset {
    Eigen::MatrixXd features;      // n x d
    std::vector<int> labels;       // size n or empty
    std::vector<int> spurious;     // size n or empty
    std::vector<int> group_ids;    // size n or empty
    int class_count = 0;           // number of label values (0 when unlabeled)
    int spurious_arity = 0;        // number of attribute values (0 when absent)
    std::string name;

    int size() const { return static_cast<int>(features.rows()); }
    int dim() const { return static_cast<int>(features.cols()); }
    bool has_labels() const { return !labels.empty(); }
    bool has_spurious() const { return !spurious.empty(); }
    bool has_groups() const { return !group_ids.empty(); }
    int group_count() const { return class_count * spurious_arity; }
};

/// Checks internal consistency: column lengths, value ranges, finite
/// features, and the g = y*A + a identity. Throws DataError/ShapeError.
void validate(const LabeledDataset& ds);

/// Fills group_ids from labels and spurious via g = y*A + a. Requires both
/// columns present.
void derive_group_ids(LabeledDataset& ds);

/// Copies the given rows, in order, with all present metadata columns.
/// Throws IndexError on out-of-range rows.
LabeledDataset subset(const LabeledDataset& ds, const std::vector<int>& rows);

/// Concatenates rows of b after a. Metadata presence must agree.
LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b);

/// Number of samples in each group id [0, C*A). Requires groups present.
std::vector<long> group_sizes(const LabeledDataset& ds);

/// Empirical distribution over group ids, summing to 1.
std::vector<double> group_fractions(const LabeledDataset& ds);

/// Row indices of each group id.
std::vector<std::vector<int>> group_members(const LabeledDataset& ds);

/// Splits n*fractions into integer counts that sum exactly to n: floor each
/// share, then hand out the remainder by largest fractional part (ties to the
/// lowest index). Fractions must be nonnegative and sum to 1 within 1e-9.
std::vector<long> largest_remainder_counts(const std::vector<double>& fractions, long n);

/// Drops the label column (and group ids, which depend on it). Used when a
/// comparison set must be treated as unlabeled.
LabeledDataset strip_labels(const LabeledDataset& ds);

/// CSV with header y,a,g,f0,...,f{d-1}. Absent label/spurious/group columns
/// are written as -1 and read back as absent. Features use 17 significant
/// digits so a write/read round trip is exact.
void save_csv(const LabeledDataset& ds, const std::string& path);
LabeledDataset load_csv(const std::string& path);

/// Binary format, magic "GICD": little-endian u32 version, u32 n, u32 d,
/// u8 flags (bit0 labels, bit1 spurious), then labels as u32, spurious as
/// u32, features row-major f64. Group ids are rederived on load.
void save_bin(const LabeledDataset& ds, const std::string& path);
LabeledDataset load_bin(const std::string& path);

/// Loads .csv or .bin by file extension.
LabeledDataset load_dataset(const std::string& path);
void save_dataset(const LabeledDataset& ds, const std::string& path);

/// Column-wise standardization fitted on one matrix and applied to others.
/// Constant columns keep their mean but divide by 1 instead of 0.
struct FeatureScaler {
    Eigen::VectorXd mean;
    Eigen::VectorXd scale;
};

FeatureScaler fit_scaler(const Eigen::MatrixXd& features);
Eigen::MatrixXd apply_scaler(const FeatureScaler& scaler, const Eigen::MatrixXd& features);

} // namespace gic
