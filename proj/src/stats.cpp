#include "ptqlab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace ptqlab {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr std::size_t kHistogramBins = 256;
constexpr std::size_t kTopMagnitudes = 16;
// Fixed chunk length so the merge tree is independent of thread count.
constexpr std::size_t kChunkColumns = 64;

struct Moments {
    std::uint64_t n = 0;
    double mean = 0.0;
    double m2 = 0.0;
    double m3 = 0.0;
    double m4 = 0.0;

    void add(double x) {
        // Standard one-pass central-moment update.
        std::uint64_t n1 = n;
        n += 1;
        double delta = x - mean;
        double delta_n = delta / static_cast<double>(n);
        double delta_n2 = delta_n * delta_n;
        double term1 = delta * delta_n * static_cast<double>(n1);
        mean += delta_n;
        m4 += term1 * delta_n2 * static_cast<double>(n * n - 3ull * n + 3ull) +
              6.0 * delta_n2 * m2 - 4.0 * delta_n * m3;
        m3 += term1 * delta_n * static_cast<double>(n - 2ull) - 3.0 * delta_n * m2;
        m2 += term1;
    }

    // Pairwise merge (Chan/Pebay update).
    void merge(const Moments& b) {
        if (b.n == 0) return;
        if (n == 0) {
            *this = b;
            return;
        }
        double na = static_cast<double>(n);
        double nb = static_cast<double>(b.n);
        double nt = na + nb;
        double delta = b.mean - mean;
        double d2 = delta * delta;
        double d3 = d2 * delta;
        double d4 = d3 * delta;

        double m4t = m4 + b.m4 + d4 * na * nb * (na * na - na * nb + nb * nb) / (nt * nt * nt) +
                     6.0 * d2 * (na * na * b.m2 + nb * nb * m2) / (nt * nt) +
                     4.0 * delta * (na * b.m3 - nb * m3) / nt;
        double m3t = m3 + b.m3 + d3 * na * nb * (na - nb) / (nt * nt) +
                     3.0 * delta * (na * b.m2 - nb * m2) / nt;
        double m2t = m2 + b.m2 + d2 * na * nb / nt;

        mean = mean + delta * nb / nt;
        m2 = m2t;
        m3 = m3t;
        m4 = m4t;
        n += b.n;
    }

    double variance() const { return n == 0 ? 0.0 : m2 / static_cast<double>(n); }

    std::optional<double> excess_kurtosis() const {
        if (n == 0 || m2 <= 0.0) return std::nullopt;
        double nn = static_cast<double>(n);
        return nn * m4 / (m2 * m2) - 3.0;
    }
};

struct Extremes {
    double lo = 0.0;
    double hi = 0.0;
    double absmax = 0.0;
    bool seen = false;

    void add(double x) {
        if (!seen) {
            lo = hi = x;
            absmax = std::abs(x);
            seen = true;
            return;
        }
        lo = std::min(lo, x);
        hi = std::max(hi, x);
        absmax = std::max(absmax, std::abs(x));
    }

    void merge(const Extremes& o) {
        if (!o.seen) return;
        if (!seen) {
            *this = o;
            return;
        }
        lo = std::min(lo, o.lo);
        hi = std::max(hi, o.hi);
        absmax = std::max(absmax, o.absmax);
    }
};

void check_input(const ActivationBatch& a) {
    a.require_finite("capture_stats input");
    if (a.cols() < 2) throw TooFewSamples("capture_stats needs at least 2 samples per channel");
    if (a.rows() == 0) throw DimensionMismatch("capture_stats: empty batch");
}

// Everything past the raw moments: per-channel summaries, outliers,
// top magnitudes and the histogram. Shared by both accumulation paths.
ActivationStats finalize(const ActivationBatch& a, double k, std::size_t layer,
                         const Moments& global, const Extremes& ext,
                         const std::vector<Moments>& channel_moments,
                         const std::vector<Extremes>& channel_ext) {
    ActivationStats s;
    s.layer = layer;
    s.channel_count = a.rows();
    s.outlier_threshold_k = k;
    s.total_count = static_cast<std::uint64_t>(a.size());

    s.global_min = ext.lo;
    s.global_max = ext.hi;
    s.global_absmax = ext.absmax;
    s.global_mean = global.mean;
    s.global_std = std::sqrt(global.variance());
    s.global_excess_kurtosis = global.excess_kurtosis();

    s.channels.resize(a.rows());
    for (std::size_t r = 0; r < a.rows(); ++r) {
        ChannelStats& c = s.channels[r];
        c.min = channel_ext[r].lo;
        c.max = channel_ext[r].hi;
        c.absmax = channel_ext[r].absmax;
        c.mean = channel_moments[r].mean;
        c.std_dev = std::sqrt(channel_moments[r].variance());
        c.excess_kurtosis = channel_moments[r].excess_kurtosis();
    }

    // Outliers against the pooled moments.
    double threshold = k * s.global_std;
    std::uint64_t count = 0;
    if (s.global_std > 0.0) {
        const std::int64_t cols = static_cast<std::int64_t>(a.cols());
        std::vector<std::uint64_t> partial(a.cols(), 0);
#pragma omp parallel for schedule(static)
        for (std::int64_t col = 0; col < cols; ++col) {
            std::uint64_t acc = 0;
            for (std::size_t r = 0; r < a.rows(); ++r)
                if (std::abs(a.at(r, static_cast<std::size_t>(col)) - s.global_mean) > threshold)
                    ++acc;
            partial[static_cast<std::size_t>(col)] = acc;
        }
        for (auto p : partial) count += p;
    }
    s.outlier_count = count;
    s.outlier_ratio = static_cast<double>(count) / static_cast<double>(s.total_count);

    // Top magnitudes.
    std::vector<double> mags(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) mags[i] = std::abs(a.data()[i]);
    std::size_t keep = std::min(kTopMagnitudes, mags.size());
    std::partial_sort(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(keep), mags.end(),
                      std::greater<double>());
    mags.resize(keep);
    s.top_magnitudes = std::move(mags);

    // Histogram over [-absmax, absmax]; a zero batch spans [-1, 1] so the
    // counts still land in a well-defined center bin.
    s.histogram.bins = kHistogramBins;
    double span = s.global_absmax > 0.0 ? s.global_absmax : 1.0;
    s.histogram.lo = -span;
    s.histogram.hi = span;
    s.histogram.counts.assign(kHistogramBins, 0);
    double width = (2.0 * span) / static_cast<double>(kHistogramBins);
    for (std::size_t i = 0; i < a.size(); ++i) {
        double x = a.data()[i];
        auto idx = static_cast<std::int64_t>(std::floor((x + span) / width));
        if (idx < 0) idx = 0;
        if (idx >= static_cast<std::int64_t>(kHistogramBins))
            idx = static_cast<std::int64_t>(kHistogramBins) - 1;
        ++s.histogram.counts[static_cast<std::size_t>(idx)];
    }
    return s;
}

} // namespace

ActivationStats capture_stats(const ActivationBatch& a, double k, std::size_t layer) {
    check_input(a);
    const std::size_t rows = a.rows();
    const std::size_t cols = a.cols();

    // Per-channel: channels are independent, one thread per channel.
    std::vector<Moments> channel_moments(rows);
    std::vector<Extremes> channel_ext(rows);
    const std::int64_t nrows = static_cast<std::int64_t>(rows);
#pragma omp parallel for schedule(static)
    for (std::int64_t r = 0; r < nrows; ++r) {
        Moments m;
        Extremes e;
        for (std::size_t c = 0; c < cols; ++c) {
            double x = a.at(static_cast<std::size_t>(r), c);
            m.add(x);
            e.add(x);
        }
        channel_moments[static_cast<std::size_t>(r)] = m;
        channel_ext[static_cast<std::size_t>(r)] = e;
    }

    // Global: fixed column chunks accumulated in parallel, merged in chunk
    // order so the result does not depend on the thread count.
    const std::size_t chunks = (cols + kChunkColumns - 1) / kChunkColumns;
    std::vector<Moments> chunk_moments(chunks);
    std::vector<Extremes> chunk_ext(chunks);
    const std::int64_t nchunks = static_cast<std::int64_t>(chunks);
#pragma omp parallel for schedule(static)
    for (std::int64_t ci = 0; ci < nchunks; ++ci) {
        std::size_t c0 = static_cast<std::size_t>(ci) * kChunkColumns;
        std::size_t c1 = std::min(c0 + kChunkColumns, cols);
        Moments m;
        Extremes e;
        for (std::size_t c = c0; c < c1; ++c)
            for (std::size_t r = 0; r < rows; ++r) {
                double x = a.at(r, c);
                m.add(x);
                e.add(x);
            }
        chunk_moments[static_cast<std::size_t>(ci)] = m;
        chunk_ext[static_cast<std::size_t>(ci)] = e;
    }
    Moments global;
    Extremes ext;
    for (std::size_t ci = 0; ci < chunks; ++ci) {
        global.merge(chunk_moments[ci]);
        ext.merge(chunk_ext[ci]);
    }

    return finalize(a, k, layer, global, ext, channel_moments, channel_ext);
}

ActivationStats capture_stats_serial(const ActivationBatch& a, double k, std::size_t layer) {
    check_input(a);
    const std::size_t rows = a.rows();
    const std::size_t cols = a.cols();

    std::vector<Moments> channel_moments(rows);
    std::vector<Extremes> channel_ext(rows);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            double x = a.at(r, c);
            channel_moments[r].add(x);
            channel_ext[r].add(x);
        }

    Moments global;
    Extremes ext;
    for (std::size_t c = 0; c < cols; ++c)
        for (std::size_t r = 0; r < rows; ++r) {
            double x = a.at(r, c);
            global.add(x);
            ext.add(x);
        }

    return finalize(a, k, layer, global, ext, channel_moments, channel_ext);
}

bool ActivationStats::operator==(const ActivationStats& o) const {
    auto ch_eq = [](const ChannelStats& x, const ChannelStats& y) {
        return x.min == y.min && x.max == y.max && x.absmax == y.absmax && x.mean == y.mean &&
               x.std_dev == y.std_dev && x.excess_kurtosis == y.excess_kurtosis;
    };
    if (!(layer == o.layer && channel_count == o.channel_count &&
          outlier_threshold_k == o.outlier_threshold_k && global_min == o.global_min &&
          global_max == o.global_max && global_absmax == o.global_absmax &&
          global_mean == o.global_mean && global_std == o.global_std &&
          global_excess_kurtosis == o.global_excess_kurtosis &&
          outlier_ratio == o.outlier_ratio && outlier_count == o.outlier_count &&
          total_count == o.total_count && top_magnitudes == o.top_magnitudes &&
          histogram.bins == o.histogram.bins && histogram.lo == o.histogram.lo &&
          histogram.hi == o.histogram.hi && histogram.counts == o.histogram.counts))
        return false;
    if (channels.size() != o.channels.size()) return false;
    for (std::size_t i = 0; i < channels.size(); ++i)
        if (!ch_eq(channels[i], o.channels[i])) return false;
    return true;
}

ComparisonReport compare_stats(const std::vector<ActivationStats>& left,
                               const std::vector<ActivationStats>& right,
                               const std::string& left_label, const std::string& right_label) {
    if (left.size() != right.size())
        throw LayerCountMismatch("stats lists differ in layer count: " +
                                 std::to_string(left.size()) + " vs " +
                                 std::to_string(right.size()));

    ComparisonReport rep;
    rep.left_label = left_label;
    rep.right_label = right_label;

    auto metric = [&](const std::string& name, auto getter) {
        MetricDelta d;
        d.metric = name;
        double sum = 0.0;
        for (std::size_t i = 0; i < left.size(); ++i) {
            double delta = getter(left[i]) - getter(right[i]);
            d.per_layer.push_back(delta);
            sum += delta;
        }
        d.mean_delta = left.empty() ? 0.0 : sum / static_cast<double>(left.size());
        d.smoother = d.mean_delta < 0.0 ? "left" : (d.mean_delta > 0.0 ? "right" : "tie");
        rep.metrics.push_back(std::move(d));
    };

    metric("absmax", [](const ActivationStats& s) { return s.global_absmax; });
    metric("excess_kurtosis", [](const ActivationStats& s) {
        return s.global_excess_kurtosis.value_or(0.0);
    });
    metric("outlier_ratio", [](const ActivationStats& s) { return s.outlier_ratio; });
    metric("absmax_over_std", [](const ActivationStats& s) {
        return s.global_std > 0.0 ? s.global_absmax / s.global_std : 0.0;
    });
    return rep;
}

std::string histogram_csv(const ActivationStats& stats) {
    std::ostringstream os;
    os << "bin_left,bin_right,count\n";
    const Histogram& h = stats.histogram;
    double width = (h.hi - h.lo) / static_cast<double>(h.bins);
    char buf[64];
    for (std::size_t i = 0; i < h.bins; ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", h.lo + width * static_cast<double>(i));
        os << buf << ",";
        std::snprintf(buf, sizeof(buf), "%.17g",
                      i + 1 == h.bins ? h.hi : h.lo + width * static_cast<double>(i + 1));
        os << buf << "," << h.counts[i] << "\n";
    }
    return os.str();
}

void export_histogram(const ActivationStats& stats, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    f << histogram_csv(stats);
    if (!f) throw IoError("write failed: " + path);
}

namespace {

ordered_json stats_to_json(const ActivationStats& s) {
    ordered_json j;
    j["layer"] = s.layer;
    j["channel_count"] = s.channel_count;
    j["outlier_threshold_k"] = s.outlier_threshold_k;
    ordered_json chans = ordered_json::array();
    for (const auto& c : s.channels) {
        ordered_json cj;
        cj["min"] = c.min;
        cj["max"] = c.max;
        cj["absmax"] = c.absmax;
        cj["mean"] = c.mean;
        cj["std"] = c.std_dev;
        if (c.excess_kurtosis)
            cj["excess_kurtosis"] = *c.excess_kurtosis;
        else
            cj["excess_kurtosis"] = nullptr;
        chans.push_back(std::move(cj));
    }
    j["channels"] = std::move(chans);
    ordered_json g;
    g["min"] = s.global_min;
    g["max"] = s.global_max;
    g["absmax"] = s.global_absmax;
    g["mean"] = s.global_mean;
    g["std"] = s.global_std;
    if (s.global_excess_kurtosis)
        g["excess_kurtosis"] = *s.global_excess_kurtosis;
    else
        g["excess_kurtosis"] = nullptr;
    g["outlier_ratio"] = s.outlier_ratio;
    g["outlier_count"] = s.outlier_count;
    g["total_count"] = s.total_count;
    j["global"] = std::move(g);
    j["top_magnitudes"] = s.top_magnitudes;
    ordered_json h;
    h["bins"] = s.histogram.bins;
    h["lo"] = s.histogram.lo;
    h["hi"] = s.histogram.hi;
    h["counts"] = s.histogram.counts;
    j["histogram"] = std::move(h);
    return j;
}

ActivationStats stats_from_json(const ordered_json& j) {
    ActivationStats s;
    s.layer = j.at("layer").get<std::size_t>();
    s.channel_count = j.at("channel_count").get<std::size_t>();
    s.outlier_threshold_k = j.at("outlier_threshold_k").get<double>();
    for (const auto& cj : j.at("channels")) {
        ChannelStats c;
        c.min = cj.at("min").get<double>();
        c.max = cj.at("max").get<double>();
        c.absmax = cj.at("absmax").get<double>();
        c.mean = cj.at("mean").get<double>();
        c.std_dev = cj.at("std").get<double>();
        if (!cj.at("excess_kurtosis").is_null())
            c.excess_kurtosis = cj.at("excess_kurtosis").get<double>();
        s.channels.push_back(c);
    }
    const auto& g = j.at("global");
    s.global_min = g.at("min").get<double>();
    s.global_max = g.at("max").get<double>();
    s.global_absmax = g.at("absmax").get<double>();
    s.global_mean = g.at("mean").get<double>();
    s.global_std = g.at("std").get<double>();
    if (!g.at("excess_kurtosis").is_null())
        s.global_excess_kurtosis = g.at("excess_kurtosis").get<double>();
    s.outlier_ratio = g.at("outlier_ratio").get<double>();
    s.outlier_count = g.at("outlier_count").get<std::uint64_t>();
    s.total_count = g.at("total_count").get<std::uint64_t>();
    s.top_magnitudes = j.at("top_magnitudes").get<std::vector<double>>();
    const auto& h = j.at("histogram");
    s.histogram.bins = h.at("bins").get<std::size_t>();
    s.histogram.lo = h.at("lo").get<double>();
    s.histogram.hi = h.at("hi").get<double>();
    s.histogram.counts = h.at("counts").get<std::vector<std::uint64_t>>();
    return s;
}

} // namespace

std::string serialize_stats(const std::vector<ActivationStats>& stats) {
    std::ostringstream os;
    for (const auto& s : stats) os << stats_to_json(s).dump() << "\n";
    return os.str();
}

std::vector<ActivationStats> parse_stats(const std::string& doc) {
    std::vector<ActivationStats> out;
    std::istringstream is(doc);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        ordered_json j = ordered_json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw ParseError("stats document: bad JSON at line " + std::to_string(lineno));
        out.push_back(stats_from_json(j));
    }
    return out;
}

void save_stats(const std::string& path, const std::vector<ActivationStats>& stats) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    f << serialize_stats(stats);
    if (!f) throw IoError("write failed: " + path);
}

std::vector<ActivationStats> load_stats(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_stats(ss.str());
}

std::string serialize_comparison(const ComparisonReport& report) {
    ordered_json j;
    j["left"] = report.left_label;
    j["right"] = report.right_label;
    ordered_json metrics = ordered_json::array();
    for (const auto& m : report.metrics) {
        ordered_json mj;
        mj["metric"] = m.metric;
        mj["per_layer_delta"] = m.per_layer;
        mj["mean_delta"] = m.mean_delta;
        mj["smoother"] = m.smoother;
        metrics.push_back(std::move(mj));
    }
    j["metrics"] = std::move(metrics);
    return j.dump(2) + "\n";
}

} // namespace ptqlab
