#include "gic/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "gic/errors.hpp"

namespace gic {

EvalReport evaluate_predictions(const std::vector<int>& predictions, const LabeledDataset& data) {
    if (!data.has_groups()) throw DataError("evaluate_predictions: dataset has no oracle groups");
    if (static_cast<int>(predictions.size()) != data.size())
        throw ShapeError("evaluate_predictions: prediction count != dataset size");

    const int n_groups = data.group_count();
    std::vector<long> hits(static_cast<std::size_t>(n_groups), 0);
    EvalReport report;
    report.per_group_count.assign(static_cast<std::size_t>(n_groups), 0);
    long total_hits = 0;
    for (int i = 0; i < data.size(); ++i) {
        const auto ui = static_cast<std::size_t>(i);
        const auto g = static_cast<std::size_t>(data.group_ids[ui]);
        ++report.per_group_count[g];
        if (predictions[ui] == data.labels[ui]) {
            ++hits[g];
            ++total_hits;
        }
    }
    report.average_accuracy = static_cast<double>(total_hits) / static_cast<double>(data.size());
    report.per_group_accuracy.assign(static_cast<std::size_t>(n_groups), -1.0);
    report.worst_group_accuracy = 1.0;
    for (int g = 0; g < n_groups; ++g) {
        const auto ug = static_cast<std::size_t>(g);
        if (report.per_group_count[ug] == 0) {
            report.excluded_groups.push_back(g);
            continue;
        }
        report.per_group_accuracy[ug] =
            static_cast<double>(hits[ug]) / static_cast<double>(report.per_group_count[ug]);
        report.worst_group_accuracy = std::min(report.worst_group_accuracy, report.per_group_accuracy[ug]);
    }
    return report;
}

EvalReport evaluate_model(const MlpModel& model, const LabeledDataset& data) {
    return evaluate_predictions(argmax_rows(forward(model, data.features)), data);
}

namespace {

// floor(G/2) smallest nonempty oracle groups; ties broken toward the lower id
std::vector<int> default_minority(const LabeledDataset& data) {
    const auto sizes = group_sizes(data);
    std::vector<std::pair<long, int>> sized;
    for (std::size_t g = 0; g < sizes.size(); ++g)
        if (sizes[g] > 0) sized.push_back({sizes[g], static_cast<int>(g)});
    std::sort(sized.begin(), sized.end());
    std::vector<int> minority;
    for (std::size_t i = 0; i < sized.size() / 2; ++i) minority.push_back(sized[i].second);
    std::sort(minority.begin(), minority.end());
    return minority;
}

} // namespace

MinorityScore minority_precision_recall(const GroupAssignment& assignment, const LabeledDataset& data,
                                        const std::vector<int>& minority) {
    if (!data.has_groups()) throw DataError("minority_precision_recall: dataset has no oracle groups");
    if (assignment.size() != data.size())
        throw ShapeError("minority_precision_recall: assignment size != dataset size");

    MinorityScore score;
    score.minority_groups = minority.empty() ? default_minority(data) : minority;
    const auto is_minority = [&](int g) {
        return std::binary_search(score.minority_groups.begin(), score.minority_groups.end(), g);
    };

    long inferred_minority = 0, oracle_minority = 0, correct_inferred = 0, correct_oracle = 0;
    for (int i = 0; i < data.size(); ++i) {
        const auto ui = static_cast<std::size_t>(i);
        const int ghat = assignment.group_ids[ui];
        const int g = data.group_ids[ui];
        if (is_minority(ghat)) {
            ++inferred_minority;
            if (g == ghat) ++correct_inferred;
        }
        if (is_minority(g)) {
            ++oracle_minority;
            if (g == ghat) ++correct_oracle;
        }
    }
    if (inferred_minority == 0) {
        score.precision_defined = false;
        score.precision = 0.0;
    } else {
        score.precision = static_cast<double>(correct_inferred) / static_cast<double>(inferred_minority);
    }
    score.recall =
        oracle_minority == 0 ? 0.0 : static_cast<double>(correct_oracle) / static_cast<double>(oracle_minority);
    return score;
}

namespace {

long relabeled_hits(const GroupAssignment& assignment, const LabeledDataset& data, const std::vector<int>& perm) {
    long hits = 0;
    for (int i = 0; i < data.size(); ++i) {
        const auto ui = static_cast<std::size_t>(i);
        if (perm[static_cast<std::size_t>(assignment.spurious_hard[ui])] == data.spurious[ui]) ++hits;
    }
    return hits;
}

} // namespace

std::vector<int> best_attribute_relabeling(const GroupAssignment& assignment, const LabeledDataset& data) {
    if (!data.has_spurious()) throw DataError("attribute_accuracy: dataset has no oracle attribute");
    if (assignment.size() != data.size())
        throw ShapeError("attribute_accuracy: assignment size != dataset size");
    const int arity = std::max(assignment.spurious_arity, data.spurious_arity);
    if (arity > 8) throw ConfigError("attribute_accuracy: alignment search caps at arity 8");

    std::vector<int> perm(static_cast<std::size_t>(arity));
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<int> best = perm;
    long best_hits = -1;
    do {
        const long hits = relabeled_hits(assignment, data, perm);
        if (hits > best_hits) {
            best_hits = hits;
            best = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

GroupAssignment relabel_attribute(const GroupAssignment& assignment, const std::vector<int>& perm) {
    const int arity = assignment.spurious_arity;
    if (static_cast<int>(perm.size()) != arity) throw ShapeError("relabel_attribute: perm size != attribute arity");
    std::vector<bool> seen(perm.size(), false);
    for (int v : perm) {
        if (v < 0 || v >= arity || seen[static_cast<std::size_t>(v)])
            throw DataError("relabel_attribute: perm is not a permutation of [0, arity)");
        seen[static_cast<std::size_t>(v)] = true;
    }
    GroupAssignment out = assignment;
    for (std::size_t i = 0; i < out.spurious_hard.size(); ++i) {
        out.spurious_hard[i] = perm[static_cast<std::size_t>(assignment.spurious_hard[i])];
        out.group_ids[i] = out.labels[i] * arity + out.spurious_hard[i];
    }
    if (assignment.spurious_soft.size() > 0)
        for (int k = 0; k < arity; ++k)
            out.spurious_soft.col(perm[static_cast<std::size_t>(k)]) =
                assignment.spurious_soft.col(k);
    return out;
}

AttributeAgreement attribute_accuracy(const GroupAssignment& assignment, const LabeledDataset& data) {
    const auto best = best_attribute_relabeling(assignment, data);
    const double n = static_cast<double>(data.size());
    std::vector<int> identity(best.size());
    std::iota(identity.begin(), identity.end(), 0);
    AttributeAgreement out;
    out.raw = static_cast<double>(relabeled_hits(assignment, data, identity)) / n;
    out.aligned = static_cast<double>(relabeled_hits(assignment, data, best)) / n;
    return out;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw ShapeError("spearman: length mismatch");
    if (x.size() < 2) throw DataError("spearman: need at least 2 points");
    const auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> order(v.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
        std::vector<double> r(v.size());
        std::size_t i = 0;
        while (i < order.size()) {
            std::size_t j = i;
            while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
            const double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // average rank, 1-based
            for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const auto rx = ranks(x);
    const auto ry = ranks(y);
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double cov = 0.0, vx = 0.0, vy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        cov += (rx[i] - mx) * (ry[i] - my);
        vx += (rx[i] - mx) * (rx[i] - mx);
        vy += (ry[i] - my) * (ry[i] - my);
    }
    if (vx == 0.0 || vy == 0.0) throw DataError("spearman: constant ranks");
    return cov / std::sqrt(vx * vy);
}

std::vector<Segment> trace_boundary_2d(const MlpModel& model, const LabeledDataset& data, int grid_n) {
    if (data.dim() != 2) throw ShapeError("trace_boundary_2d: dataset must have exactly 2 features");
    if (model.input_dim() != 2 || model.output_dim() != 2)
        throw ShapeError("trace_boundary_2d: model must map 2 features to 2 classes");
    if (grid_n < 2) throw ConfigError("trace_boundary_2d: grid_n must be at least 2");

    const double x_min = data.features.col(0).minCoeff(), x_max = data.features.col(0).maxCoeff();
    const double y_min = data.features.col(1).minCoeff(), y_max = data.features.col(1).maxCoeff();
    const double dx = (x_max - x_min) / (grid_n - 1);
    const double dy = (y_max - y_min) / (grid_n - 1);

    // margin = logit_1 - logit_0 on the lattice
    Eigen::MatrixXd points(grid_n * grid_n, 2);
    for (int r = 0; r < grid_n; ++r)
        for (int c = 0; c < grid_n; ++c) {
            points(r * grid_n + c, 0) = x_min + c * dx;
            points(r * grid_n + c, 1) = y_min + r * dy;
        }
    // use pre-activation scores: softmax is monotone, the argmax boundary is
    // the zero set of the logit difference
    MlpModel linearized = model;
    linearized.activations.back() = Activation::Identity;
    const Eigen::MatrixXd logits = forward(linearized, points);
    Eigen::MatrixXd margin(grid_n, grid_n);
    for (int r = 0; r < grid_n; ++r)
        for (int c = 0; c < grid_n; ++c) margin(r, c) = logits(r * grid_n + c, 1) - logits(r * grid_n + c, 0);

    const auto lerp = [](double a, double b, double va, double vb) { return a + (0.0 - va) / (vb - va) * (b - a); };
    std::vector<Segment> segments;
    for (int r = 0; r + 1 < grid_n; ++r)
        for (int c = 0; c + 1 < grid_n; ++c) {
            // collect sign-change points on this cell's edges
            const double x0 = x_min + c * dx, x1 = x0 + dx;
            const double y0 = y_min + r * dy, y1 = y0 + dy;
            const double v00 = margin(r, c), v01 = margin(r, c + 1), v10 = margin(r + 1, c), v11 = margin(r + 1, c + 1);
            std::vector<std::pair<double, double>> crossings;
            if ((v00 < 0) != (v01 < 0)) crossings.push_back({lerp(x0, x1, v00, v01), y0});
            if ((v10 < 0) != (v11 < 0)) crossings.push_back({lerp(x0, x1, v10, v11), y1});
            if ((v00 < 0) != (v10 < 0)) crossings.push_back({x0, lerp(y0, y1, v00, v10)});
            if ((v01 < 0) != (v11 < 0)) crossings.push_back({x1, lerp(y0, y1, v01, v11)});
            if (crossings.size() >= 2)
                segments.push_back({crossings[0].first, crossings[0].second, crossings[1].first, crossings[1].second});
        }
    return segments;
}

void plot_boundary_2d(const std::vector<std::pair<std::string, const MlpModel*>>& models,
                      const LabeledDataset& data, const std::string& path, int grid_n) {
    if (!data.has_groups()) throw DataError("plot_boundary_2d: dataset has no oracle groups");
    if (models.empty()) throw ConfigError("plot_boundary_2d: no models given");

    const double x_min = data.features.col(0).minCoeff(), x_max = data.features.col(0).maxCoeff();
    const double y_min = data.features.col(1).minCoeff(), y_max = data.features.col(1).maxCoeff();
    const double w = 640.0, h = 640.0, pad = 60.0;
    const auto sx = [&](double x) { return pad + (x - x_min) / (x_max - x_min) * (w - 2 * pad); };
    const auto sy = [&](double y) { return h - pad - (y - y_min) / (y_max - y_min) * (h - 2 * pad); };

    static const char* group_colors[] = {"#4466cc", "#66bbee", "#cc6644", "#eebb66",
                                         "#44aa66", "#aa44aa", "#888888", "#222222"};
    static const char* line_colors[] = {"#000000", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"};

    std::ofstream out(path);
    if (!out) throw DataError("plot_boundary_2d: cannot open '" + path + "'");
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 "
        << w << " " << h << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    // subsampled scatter, colored by oracle group
    char buf[160];
    const int stride = std::max(1, data.size() / 2000);
    for (int i = 0; i < data.size(); i += stride) {
        const int g = data.group_ids[static_cast<std::size_t>(i)] % 8;
        std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"2\" fill=\"%s\" fill-opacity=\"0.5\"/>\n",
                      sx(data.features(i, 0)), sy(data.features(i, 1)), group_colors[g]);
        out << buf;
    }

    // one polyline per model; segments are short, so emit them as a path
    for (std::size_t m = 0; m < models.size(); ++m) {
        const auto segments = trace_boundary_2d(*models[m].second, data, grid_n);
        out << "<path stroke=\"" << line_colors[m % 6] << "\" stroke-width=\"2\" fill=\"none\" d=\"";
        for (const auto& s : segments) {
            std::snprintf(buf, sizeof buf, "M%.2f %.2fL%.2f %.2f", sx(s.x0), sy(s.y0), sx(s.x1), sy(s.y1));
            out << buf;
        }
        out << "\"/>\n";
        std::snprintf(buf, sizeof buf, "<text x=\"%.0f\" y=\"%.0f\" fill=\"%s\" font-size=\"14\">%s</text>\n",
                      pad + 4, pad + 16.0 * static_cast<double>(m + 1), line_colors[m % 6],
                      models[m].first.c_str());
        out << buf;
    }
    out << "</svg>\n";
    if (!out) throw DataError("plot_boundary_2d: write to '" + path + "' failed");
}

} // namespace gic
