#include "gic/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "gic/errors.hpp"

namespace gic {

namespace {

constexpr char kDataMagic[4] = {'G', 'I', 'C', 'D'};
constexpr std::uint32_t kDataVersion = 1;

void check_column(const std::vector<int>& col, int n, int arity, const char* what) {
    if (col.empty()) return;
    if (static_cast<int>(col.size()) != n)
        throw ShapeError(std::string(what) + " column has " + std::to_string(col.size()) + " entries for " +
                         std::to_string(n) + " rows");
    for (std::size_t i = 0; i < col.size(); ++i)
        if (col[i] < 0 || col[i] >= arity)
            throw DataError(std::string(what) + " value " + std::to_string(col[i]) + " outside [0," +
                            std::to_string(arity) + ") at row " + std::to_string(i));
}

} // namespace

void validate(const LabeledDataset& ds) {
    const int n = ds.size();
    if (!ds.features.allFinite()) throw DataError(ds.name + ": non-finite feature value");
    if (ds.has_labels() && ds.class_count <= 0)
        throw DataError(ds.name + ": labels present but class_count unset");
    if (ds.has_spurious() && ds.spurious_arity <= 0)
        throw DataError(ds.name + ": spurious present but spurious_arity unset");
    check_column(ds.labels, n, ds.class_count, "label");
    check_column(ds.spurious, n, ds.spurious_arity, "spurious");
    if (ds.has_groups()) {
        if (!ds.has_labels() || !ds.has_spurious())
            throw DataError(ds.name + ": group ids present without labels and spurious");
        check_column(ds.group_ids, n, ds.group_count(), "group");
        for (int i = 0; i < n; ++i) {
            const auto ui = static_cast<std::size_t>(i);
            if (ds.group_ids[ui] != ds.labels[ui] * ds.spurious_arity + ds.spurious[ui])
                throw DataError(ds.name + ": group id != y*A + a at row " + std::to_string(i));
        }
    }
}

void derive_group_ids(LabeledDataset& ds) {
    if (!ds.has_labels() || !ds.has_spurious())
        throw DataError(ds.name + ": cannot derive group ids without labels and spurious");
    ds.group_ids.resize(ds.labels.size());
    for (std::size_t i = 0; i < ds.labels.size(); ++i)
        ds.group_ids[i] = ds.labels[i] * ds.spurious_arity + ds.spurious[i];
}

LabeledDataset subset(const LabeledDataset& ds, const std::vector<int>& rows) {
    LabeledDataset out;
    out.class_count = ds.class_count;
    out.spurious_arity = ds.spurious_arity;
    out.name = ds.name;
    out.features.resize(static_cast<Eigen::Index>(rows.size()), ds.features.cols());
    if (ds.has_labels()) out.labels.resize(rows.size());
    if (ds.has_spurious()) out.spurious.resize(rows.size());
    if (ds.has_groups()) out.group_ids.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const int r = rows[i];
        if (r < 0 || r >= ds.size())
            throw IndexError(ds.name + ": subset row " + std::to_string(r) + " outside [0," +
                             std::to_string(ds.size()) + ")");
        out.features.row(static_cast<Eigen::Index>(i)) = ds.features.row(r);
        const auto ur = static_cast<std::size_t>(r);
        if (ds.has_labels()) out.labels[i] = ds.labels[ur];
        if (ds.has_spurious()) out.spurious[i] = ds.spurious[ur];
        if (ds.has_groups()) out.group_ids[i] = ds.group_ids[ur];
    }
    return out;
}

LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b) {
    if (a.dim() != b.dim()) throw ShapeError("concat: feature dims disagree");
    if (a.has_labels() != b.has_labels() || a.has_spurious() != b.has_spurious())
        throw DataError("concat: metadata presence disagrees");
    LabeledDataset out = a;
    out.features.conservativeResize(a.size() + b.size(), a.dim());
    out.features.bottomRows(b.size()) = b.features;
    out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
    out.spurious.insert(out.spurious.end(), b.spurious.begin(), b.spurious.end());
    if (a.has_groups() && b.has_groups())
        out.group_ids.insert(out.group_ids.end(), b.group_ids.begin(), b.group_ids.end());
    else
        out.group_ids.clear();
    return out;
}

std::vector<long> group_sizes(const LabeledDataset& ds) {
    if (!ds.has_groups()) throw DataError(ds.name + ": group ids absent");
    std::vector<long> counts(static_cast<std::size_t>(ds.group_count()), 0);
    for (int g : ds.group_ids) ++counts[static_cast<std::size_t>(g)];
    return counts;
}

std::vector<double> group_fractions(const LabeledDataset& ds) {
    const auto counts = group_sizes(ds);
    std::vector<double> f(counts.size());
    const double n = static_cast<double>(ds.size());
    for (std::size_t g = 0; g < counts.size(); ++g) f[g] = static_cast<double>(counts[g]) / n;
    return f;
}

std::vector<std::vector<int>> group_members(const LabeledDataset& ds) {
    if (!ds.has_groups()) throw DataError(ds.name + ": group ids absent");
    std::vector<std::vector<int>> members(static_cast<std::size_t>(ds.group_count()));
    for (int i = 0; i < ds.size(); ++i)
        members[static_cast<std::size_t>(ds.group_ids[static_cast<std::size_t>(i)])].push_back(i);
    return members;
}

std::vector<long> largest_remainder_counts(const std::vector<double>& fractions, long n) {
    if (fractions.empty()) throw DataError("largest_remainder_counts: empty fractions");
    double sum = 0.0;
    for (double f : fractions) {
        if (f < 0.0) throw DataError("largest_remainder_counts: negative fraction");
        sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw DataError("largest_remainder_counts: fractions sum to " + std::to_string(sum));

    std::vector<long> counts(fractions.size());
    std::vector<std::pair<double, std::size_t>> remainders(fractions.size());
    long assigned = 0;
    for (std::size_t i = 0; i < fractions.size(); ++i) {
        const double share = fractions[i] * static_cast<double>(n);
        counts[i] = static_cast<long>(std::floor(share));
        assigned += counts[i];
        remainders[i] = {share - std::floor(share), i};
    }
    // hand out what floor() dropped, biggest fractional part first, ties to
    // the lowest index
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (long r = 0; r < n - assigned; ++r) ++counts[remainders[static_cast<std::size_t>(r)].second];
    return counts;
}

LabeledDataset strip_labels(const LabeledDataset& ds) {
    LabeledDataset out = ds;
    out.labels.clear();
    out.group_ids.clear();
    out.class_count = 0;
    return out;
}

void save_csv(const LabeledDataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("save_csv: cannot open '" + path + "'");
    out << "y,a,g";
    for (int c = 0; c < ds.dim(); ++c) out << ",f" << c;
    out << "\n";
    char buf[32];
    for (int i = 0; i < ds.size(); ++i) {
        const auto ui = static_cast<std::size_t>(i);
        out << (ds.has_labels() ? ds.labels[ui] : -1) << ',' << (ds.has_spurious() ? ds.spurious[ui] : -1) << ','
            << (ds.has_groups() ? ds.group_ids[ui] : -1);
        for (int c = 0; c < ds.dim(); ++c) {
            std::snprintf(buf, sizeof buf, "%.17g", ds.features(i, c));
            out << ',' << buf;
        }
        out << '\n';
    }
    if (!out) throw DataError("save_csv: write to '" + path + "' failed");
}

LabeledDataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("load_csv: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw FormatError(path + ": empty file (line 1)");
    if (line.rfind("y,a,g", 0) != 0) throw FormatError(path + ": bad header (line 1), expected y,a,g,f0,...");
    const auto expected_fields = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
    if (expected_fields < 4) throw FormatError(path + ": header has no feature columns (line 1)");
    const std::size_t d = expected_fields - 3;

    std::vector<int> ys, as, gs;
    std::vector<double> feats;
    long lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() != expected_fields)
            throw FormatError(path + ": row has " + std::to_string(fields.size()) + " fields, expected " +
                              std::to_string(expected_fields) + " (line " + std::to_string(lineno) + ")");
        try {
            ys.push_back(std::stoi(fields[0]));
            as.push_back(std::stoi(fields[1]));
            gs.push_back(std::stoi(fields[2]));
            for (std::size_t c = 0; c < d; ++c) feats.push_back(std::stod(fields[3 + c]));
        } catch (const std::exception&) {
            throw FormatError(path + ": unparsable field (line " + std::to_string(lineno) + ")");
        }
    }

    LabeledDataset ds;
    ds.name = path;
    const auto n = ys.size();
    ds.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = feats[i * d + c];

    const bool have_y = std::none_of(ys.begin(), ys.end(), [](int v) { return v < 0; });
    const bool have_a = std::none_of(as.begin(), as.end(), [](int v) { return v < 0; });
    if (have_y && !ys.empty()) {
        ds.labels = std::move(ys);
        ds.class_count = *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
    }
    if (have_a && !as.empty()) {
        ds.spurious = std::move(as);
        ds.spurious_arity = *std::max_element(ds.spurious.begin(), ds.spurious.end()) + 1;
    }
    if (ds.has_labels() && ds.has_spurious()) {
        // trust g where present, rederive otherwise; validate() checks the identity
        const bool have_g = std::none_of(gs.begin(), gs.end(), [](int v) { return v < 0; });
        if (have_g) {
            // the stored arity may exceed max(a)+1 if some value is unobserved;
            // infer A from g = y*A + a when possible
            for (std::size_t i = 0; i < n; ++i)
                if (ds.labels[i] > 0) {
                    const int a_count = (gs[i] - ds.spurious[i]) / ds.labels[i];
                    if (a_count > ds.spurious_arity) ds.spurious_arity = a_count;
                }
            ds.group_ids = std::move(gs);
        } else {
            derive_group_ids(ds);
        }
    }
    validate(ds);
    return ds;
}

namespace {

template <typename T>
void write_raw(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::ifstream& in, const std::string& path, long& offset) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw FormatError(path + ": truncated at byte " + std::to_string(offset));
    offset += static_cast<long>(sizeof(T));
    return v;
}

} // namespace

void save_bin(const LabeledDataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("save_bin: cannot open '" + path + "'");
    out.write(kDataMagic, 4);
    write_raw(out, kDataVersion);
    write_raw(out, static_cast<std::uint32_t>(ds.size()));
    write_raw(out, static_cast<std::uint32_t>(ds.dim()));
    const std::uint8_t flags =
        static_cast<std::uint8_t>((ds.has_labels() ? 1 : 0) | (ds.has_spurious() ? 2 : 0));
    write_raw(out, flags);
    if (ds.has_labels()) {
        write_raw(out, static_cast<std::uint32_t>(ds.class_count));
        for (int y : ds.labels) write_raw(out, static_cast<std::uint32_t>(y));
    }
    if (ds.has_spurious()) {
        write_raw(out, static_cast<std::uint32_t>(ds.spurious_arity));
        for (int a : ds.spurious) write_raw(out, static_cast<std::uint32_t>(a));
    }
    for (int i = 0; i < ds.size(); ++i)
        for (int c = 0; c < ds.dim(); ++c) write_raw(out, ds.features(i, c));
    if (!out) throw DataError("save_bin: write to '" + path + "' failed");
}

LabeledDataset load_bin(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load_bin: cannot open '" + path + "'");
    long offset = 0;
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kDataMagic, 4) != 0)
        throw FormatError(path + ": bad magic at byte 0, expected GICD");
    offset = 4;
    const auto version = read_raw<std::uint32_t>(in, path, offset);
    if (version != kDataVersion)
        throw FormatError(path + ": unsupported version " + std::to_string(version) + " at byte 4");
    const auto n = read_raw<std::uint32_t>(in, path, offset);
    const auto d = read_raw<std::uint32_t>(in, path, offset);
    const auto flags = read_raw<std::uint8_t>(in, path, offset);
    if (flags > 3) throw FormatError(path + ": unknown flag bits at byte 12");

    LabeledDataset ds;
    ds.name = path;
    if (flags & 1) {
        ds.class_count = static_cast<int>(read_raw<std::uint32_t>(in, path, offset));
        ds.labels.resize(n);
        for (std::uint32_t i = 0; i < n; ++i)
            ds.labels[i] = static_cast<int>(read_raw<std::uint32_t>(in, path, offset));
    }
    if (flags & 2) {
        ds.spurious_arity = static_cast<int>(read_raw<std::uint32_t>(in, path, offset));
        ds.spurious.resize(n);
        for (std::uint32_t i = 0; i < n; ++i)
            ds.spurious[i] = static_cast<int>(read_raw<std::uint32_t>(in, path, offset));
    }
    ds.features.resize(n, d);
    for (std::uint32_t i = 0; i < n; ++i)
        for (std::uint32_t c = 0; c < d; ++c) ds.features(i, c) = read_raw<double>(in, path, offset);
    if (ds.has_labels() && ds.has_spurious()) derive_group_ids(ds);
    validate(ds);
    return ds;
}

LabeledDataset load_dataset(const std::string& path) {
    if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".bin") == 0) return load_bin(path);
    if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0) return load_csv(path);
    throw ConfigError("load_dataset: '" + path + "' must end in .csv or .bin");
}

void save_dataset(const LabeledDataset& ds, const std::string& path) {
    if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".bin") == 0) return save_bin(ds, path);
    if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0) return save_csv(ds, path);
    throw ConfigError("save_dataset: '" + path + "' must end in .csv or .bin");
}

FeatureScaler fit_scaler(const Eigen::MatrixXd& features) {
    if (features.rows() == 0) throw DataError("fit_scaler: empty matrix");
    FeatureScaler s;
    s.mean = features.colwise().mean().transpose();
    Eigen::MatrixXd centered = features.rowwise() - s.mean.transpose();
    s.scale = centered.array().square().colwise().mean().sqrt().transpose();
    for (Eigen::Index c = 0; c < s.scale.size(); ++c)
        if (s.scale(c) < 1e-12) s.scale(c) = 1.0;  // constant column: leave as-is
    return s;
}

Eigen::MatrixXd apply_scaler(const FeatureScaler& scaler, const Eigen::MatrixXd& features) {
    if (features.cols() != scaler.mean.size()) throw ShapeError("apply_scaler: column count mismatch");
    Eigen::MatrixXd out = features.rowwise() - scaler.mean.transpose();
    out.array().rowwise() /= scaler.scale.transpose().array();
    return out;
}

} // namespace gic
