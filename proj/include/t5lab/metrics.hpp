#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

namespace t5lab {

double accuracy(std::span<const int> preds, std::span<const int> golds);

// Binary F1 for the given positive class; 0 when precision + recall is 0.
double f1(std::span<const int> preds, std::span<const int> golds, int positive_class);

// Binary Matthews correlation; the positive class is the largest label value observed.
// Returns 0 when the denominator degenerates.
double matthews(std::span<const int> preds, std::span<const int> golds);

// Pearson correlation; constant input is degenerate and yields 0 with the flag set.
double pearson(std::span<const double> x, std::span<const double> y, bool* degenerate = nullptr);

// Pearson over average ranks (ties get the mean rank).
double spearman(std::span<const double> x, std::span<const double> y, bool* degenerate = nullptr);

struct MetricBundle {
    std::string task;
    std::map<std::string, double> values;
    bool degenerate = false;  // some metric hit a degenerate case and was defined as 0
};

// Within-task unweighted mean of the task's metrics.
double task_score(const MetricBundle& bundle);

struct AggregateResult {
    std::vector<double> per_task;
    double overall = 0.0;
};

// Metrics are averaged within each task first, then tasks are averaged unweighted.
AggregateResult aggregate(std::span<const MetricBundle> bundles);

}  // namespace t5lab
