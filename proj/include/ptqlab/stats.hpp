#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ptqlab/matrix.hpp"

namespace ptqlab {

struct ChannelStats {
    double min = 0.0;
    double max = 0.0;
    double absmax = 0.0;
    double mean = 0.0;
    double std_dev = 0.0;
    std::optional<double> excess_kurtosis; // empty for zero-variance channels
};

struct Histogram {
    std::size_t bins = 256;
    double lo = 0.0;
    double hi = 0.0;
    std::vector<std::uint64_t> counts;
};

/// Distribution summary of one activation batch (channels are feature
/// rows, samples are columns). Global moments pool every element;
/// outlier_ratio counts |x - mean| > k * std over that pool.
struct ActivationStats {
    std::size_t layer = 0;
    std::size_t channel_count = 0;
    std::vector<ChannelStats> channels;
    double outlier_threshold_k = 3.0;

    double global_min = 0.0;
    double global_max = 0.0;
    double global_absmax = 0.0;
    double global_mean = 0.0;
    double global_std = 0.0;
    std::optional<double> global_excess_kurtosis;
    double outlier_ratio = 0.0;
    std::uint64_t outlier_count = 0;
    std::uint64_t total_count = 0;

    std::vector<double> top_magnitudes; // up to 16 largest |x|, descending
    Histogram histogram;

    bool operator==(const ActivationStats& o) const;
};

ActivationStats capture_stats(const ActivationBatch& a, double k = 3.0, std::size_t layer = 0);

/// Serial single-pass reference for the chunk-merged parallel
/// accumulator; kept for tests and the bench target.
ActivationStats capture_stats_serial(const ActivationBatch& a, double k = 3.0,
                                     std::size_t layer = 0);

struct MetricDelta {
    std::string metric;
    std::vector<double> per_layer; // left - right
    double mean_delta = 0.0;
    std::string smoother; // "left", "right" or "tie"
};

struct ComparisonReport {
    std::string left_label;
    std::string right_label;
    std::vector<MetricDelta> metrics;
};

ComparisonReport compare_stats(const std::vector<ActivationStats>& left,
                               const std::vector<ActivationStats>& right,
                               const std::string& left_label = "left",
                               const std::string& right_label = "right");

/// CSV with one record per bin: bin_left,bin_right,count.
void export_histogram(const ActivationStats& stats, const std::string& path);
std::string histogram_csv(const ActivationStats& stats);

/// Stats document: one JSON object per layer, one per line, stable key
/// order.
std::string serialize_stats(const std::vector<ActivationStats>& stats);
std::vector<ActivationStats> parse_stats(const std::string& doc);
void save_stats(const std::string& path, const std::vector<ActivationStats>& stats);
std::vector<ActivationStats> load_stats(const std::string& path);

std::string serialize_comparison(const ComparisonReport& report);

} // namespace ptqlab
