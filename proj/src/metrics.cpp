#include "t5lab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "t5lab/error.hpp"

namespace t5lab {

namespace {

void check_lengths(size_t a, size_t b, const char* what) {
    if (a != b) throw DataError(std::string(what) + ": length mismatch");
    if (a == 0) throw DataError(std::string(what) + ": empty input");
}

}  // namespace

double accuracy(std::span<const int> preds, std::span<const int> golds) {
    check_lengths(preds.size(), golds.size(), "accuracy");
    size_t hits = 0;
    for (size_t i = 0; i < preds.size(); ++i) hits += preds[i] == golds[i];
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double f1(std::span<const int> preds, std::span<const int> golds, int positive_class) {
    check_lengths(preds.size(), golds.size(), "f1");
    double tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < preds.size(); ++i) {
        bool p = preds[i] == positive_class;
        bool g = golds[i] == positive_class;
        tp += p && g;
        fp += p && !g;
        fn += !p && g;
    }
    if (tp + fp == 0 || tp + fn == 0) return 0.0;
    double precision = tp / (tp + fp);
    double recall = tp / (tp + fn);
    if (precision + recall == 0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

double matthews(std::span<const int> preds, std::span<const int> golds) {
    check_lengths(preds.size(), golds.size(), "matthews");
    int positive = preds[0];
    for (int v : preds) positive = std::max(positive, v);
    for (int v : golds) positive = std::max(positive, v);
    double tp = 0, tn = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < preds.size(); ++i) {
        bool p = preds[i] == positive;
        bool g = golds[i] == positive;
        tp += p && g;
        tn += !p && !g;
        fp += p && !g;
        fn += !p && g;
    }
    double denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
    if (denom == 0) return 0.0;
    return (tp * tn - fp * fn) / std::sqrt(denom);
}

double pearson(std::span<const double> x, std::span<const double> y, bool* degenerate) {
    check_lengths(x.size(), y.size(), "pearson");
    if (x.size() < 2) throw DataError("pearson: need at least 2 points");
    if (degenerate) *degenerate = false;
    double n = static_cast<double>(x.size());
    double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0 || syy == 0) {
        if (degenerate) *degenerate = true;
        return 0.0;
    }
    return sxy / std::sqrt(sxx * syy);
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
    size_t n = v.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        double mean_rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (size_t k = i; k <= j; ++k) ranks[order[k]] = mean_rank;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y, bool* degenerate) {
    check_lengths(x.size(), y.size(), "spearman");
    std::vector<double> rx = average_ranks(x);
    std::vector<double> ry = average_ranks(y);
    return pearson(rx, ry, degenerate);
}

double task_score(const MetricBundle& bundle) {
    if (bundle.values.empty()) throw DataError("task_score: bundle '" + bundle.task + "' has no metrics");
    double s = 0;
    for (const auto& [name, v] : bundle.values) s += v;
    return s / static_cast<double>(bundle.values.size());
}

AggregateResult aggregate(std::span<const MetricBundle> bundles) {
    if (bundles.empty()) throw DataError("aggregate: no tasks");
    AggregateResult out;
    for (const auto& b : bundles) {
        out.per_task.push_back(task_score(b));
        out.overall += out.per_task.back();
    }
    out.overall /= static_cast<double>(bundles.size());
    return out;
}

}  // namespace t5lab
