#include "har/datasets.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "har/tensor.hpp"

namespace har {

namespace fs = std::filesystem;

SequenceDataset SequenceDataset::subset(const std::vector<std::size_t>& indices) const {
    SequenceDataset out;
    out.num_channels = num_channels;
    out.seq_len = seq_len;
    out.class_names = class_names;
    out.channel_names = channel_names;
    out.sample_rate_hz = sample_rate_hz;
    const std::size_t w = num_channels * seq_len;
    out.data.reserve(indices.size() * w);
    out.labels.reserve(indices.size());
    for (std::size_t i : indices) {
        if (i >= size()) throw std::invalid_argument("subset: index out of range");
        out.data.insert(out.data.end(), data.begin() + i * w, data.begin() + (i + 1) * w);
        out.labels.push_back(labels[i]);
        if (has_segments()) out.segments.push_back(segments[i]);
    }
    return out;
}

void SequenceDataset::check() const {
    if (data.size() != size() * num_channels * seq_len) {
        throw std::runtime_error("dataset: data size does not match [N,C,L]");
    }
    const int k = static_cast<int>(class_names.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || (k > 0 && labels[i] >= k)) {
            throw std::runtime_error("dataset: label " + std::to_string(labels[i]) + " at window " +
                                     std::to_string(i) + " out of range");
        }
    }
    if (!segments.empty() && segments.size() != size()) {
        throw std::runtime_error("dataset: segment list length mismatch");
    }
    for (const auto& segs : segments) {
        for (const Interval& s : segs) {
            if (s.end <= s.begin || s.end > seq_len) {
                throw std::runtime_error("dataset: segment outside [0, L)");
            }
        }
    }
    for (double v : data) {
        if (!std::isfinite(v)) throw std::runtime_error("dataset: non-finite sample value");
    }
}

// ---------------- UCI HAR loader ----------------

namespace {

const std::array<const char*, 6> kUciChannels = {
    "body_acc_x", "body_acc_y", "body_acc_z", "body_gyro_x", "body_gyro_y", "body_gyro_z",
};
// the full raw-signal directory; presence is checked even for files not loaded
const std::array<const char*, 9> kUciAllSignals = {
    "body_acc_x", "body_acc_y", "body_acc_z", "body_gyro_x", "body_gyro_y",
    "body_gyro_z", "total_acc_x", "total_acc_y", "total_acc_z",
};

std::vector<std::vector<double>> parse_signal_file(const fs::path& path, std::size_t row_len) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("ucihar: cannot open " + path.string());
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::vector<double> row;
        row.reserve(row_len);
        const char* p = line.data();
        const char* end = p + line.size();
        while (p < end) {
            while (p < end && (*p == ' ' || *p == '\t' || *p == '\r')) ++p;
            if (p >= end) break;
            double v = 0.0;
            auto [next, ec] = std::from_chars(p, end, v);
            if (ec != std::errc()) {
                throw std::runtime_error("ucihar: bad float at " + path.string() + ":" +
                                         std::to_string(line_no));
            }
            row.push_back(v);
            p = next;
        }
        if (row.empty() && line_no > 0 && in.eof()) break;  // trailing blank line
        if (row.size() != row_len) {
            throw std::runtime_error("ucihar: expected " + std::to_string(row_len) +
                                     " values, got " + std::to_string(row.size()) + " at " +
                                     path.string() + ":" + std::to_string(line_no));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace

SequenceDataset load_ucihar(const std::string& root_dir, const std::string& split) {
    if (split != "train" && split != "test") {
        throw std::invalid_argument("ucihar: split must be 'train' or 'test', got '" + split + "'");
    }
    const fs::path base = fs::path(root_dir) / split;
    const fs::path signals = base / "Inertial Signals";
    for (const char* name : kUciAllSignals) {
        const fs::path p = signals / (std::string(name) + "_" + split + ".txt");
        if (!fs::exists(p)) throw std::runtime_error("ucihar: missing file " + p.string());
    }
    const fs::path label_path = base / ("y_" + split + ".txt");
    if (!fs::exists(label_path)) {
        throw std::runtime_error("ucihar: missing file " + label_path.string());
    }

    constexpr std::size_t kWindowLen = 128;
    SequenceDataset ds;
    ds.num_channels = kUciChannels.size();
    ds.seq_len = kWindowLen;
    ds.sample_rate_hz = 50.0;
    ds.channel_names.assign(kUciChannels.begin(), kUciChannels.end());
    ds.class_names = {"WALKING",  "WALKING_UPSTAIRS", "WALKING_DOWNSTAIRS",
                      "SITTING",  "STANDING",         "LAYING"};

    std::vector<std::vector<std::vector<double>>> per_channel;
    per_channel.reserve(ds.num_channels);
    std::size_t n = 0;
    for (std::size_t c = 0; c < ds.num_channels; ++c) {
        const fs::path p = signals / (std::string(kUciChannels[c]) + "_" + split + ".txt");
        per_channel.push_back(parse_signal_file(p, kWindowLen));
        if (c == 0) {
            n = per_channel[0].size();
        } else if (per_channel[c].size() != n) {
            throw std::runtime_error("ucihar: " + p.string() + " has " +
                                     std::to_string(per_channel[c].size()) + " windows, expected " +
                                     std::to_string(n));
        }
    }

    {
        std::ifstream in(label_path);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty() || line == "\r") continue;
            int v = 0;
            auto [next, ec] = std::from_chars(line.data(), line.data() + line.size(), v);
            (void)next;
            if (ec != std::errc() || v < 1 || v > 6) {
                throw std::runtime_error("ucihar: label outside 1..6 at " + label_path.string() +
                                         ":" + std::to_string(line_no));
            }
            ds.labels.push_back(v - 1);
        }
    }
    if (ds.labels.size() != n) {
        throw std::runtime_error("ucihar: " + std::to_string(ds.labels.size()) + " labels for " +
                                 std::to_string(n) + " windows");
    }

    ds.data.resize(n * ds.num_channels * kWindowLen);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < ds.num_channels; ++c) {
            std::copy(per_channel[c][i].begin(), per_channel[c][i].end(),
                      ds.data.begin() + (i * ds.num_channels + c) * kWindowLen);
        }
    }
    return ds;
}

// ---------------- standardization ----------------

ChannelStats compute_channel_stats(const SequenceDataset& ds) {
    if (ds.size() == 0) throw std::invalid_argument("compute_channel_stats: empty dataset");
    const std::size_t c_n = ds.num_channels, l = ds.seq_len, n = ds.size();
    ChannelStats st;
    st.mean.assign(c_n, 0.0);
    st.stddev.assign(c_n, 0.0);
    const double count = static_cast<double>(n * l);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < c_n; ++c) {
            const double* row = ds.data.data() + (i * c_n + c) * l;
            double s = 0.0;
            for (std::size_t t = 0; t < l; ++t) s += row[t];
            st.mean[c] += s;
        }
    }
    for (std::size_t c = 0; c < c_n; ++c) st.mean[c] /= count;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < c_n; ++c) {
            const double* row = ds.data.data() + (i * c_n + c) * l;
            double s = 0.0;
            for (std::size_t t = 0; t < l; ++t) {
                const double d = row[t] - st.mean[c];
                s += d * d;
            }
            st.stddev[c] += s;
        }
    }
    for (std::size_t c = 0; c < c_n; ++c) st.stddev[c] = std::sqrt(st.stddev[c] / count);
    return st;
}

SequenceDataset standardize(SequenceDataset ds, const ChannelStats& stats) {
    if (stats.mean.size() != ds.num_channels || stats.stddev.size() != ds.num_channels) {
        throw std::invalid_argument("standardize: stats for " + std::to_string(stats.mean.size()) +
                                    " channels, dataset has " + std::to_string(ds.num_channels));
    }
    const std::size_t c_n = ds.num_channels, l = ds.seq_len, n = ds.size();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < c_n; ++c) {
            double* row = ds.data.data() + (i * c_n + c) * l;
            const double mean = stats.mean[c];
            const double inv = 1.0 / std::max(stats.stddev[c], 1e-8);
            for (std::size_t t = 0; t < l; ++t) row[t] = (row[t] - mean) * inv;
        }
    }
    return ds;
}

// ---------------- synthetic weakly labeled generator ----------------

void validate(const SynthConfig& c) {
    auto fail = [](const std::string& m) { throw std::invalid_argument("synth config: " + m); };
    if (c.num_windows < 1) fail("num_windows must be >= 1");
    if (c.seq_len < 8 || c.num_channels < 1) fail("seq_len/num_channels too small");
    if (c.sample_rate_hz <= 0) fail("sample_rate_hz must be positive");
    double sum = 0.0;
    for (double p : c.class_proportions) {
        if (p <= 0.0) fail("class proportions must be positive");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6) fail("class proportions must sum to 1");
    if (c.min_segment_len < 2 || c.min_segment_len > c.max_segment_len) {
        fail("segment length range invalid");
    }
    if (c.max_segment_len > c.seq_len) fail("max_segment_len exceeds seq_len");
    if (c.noise_sigma < 0) fail("noise_sigma must be >= 0");
    for (double f : c.foreground_freq_hz) {
        if (f <= 0) fail("foreground frequencies must be positive");
    }
    if (c.background_freq_hz <= 0 || c.background_amp <= 0) fail("background parameters invalid");
}

nlohmann::json to_json(const SynthConfig& c) {
    return {{"num_windows", c.num_windows},
            {"seq_len", c.seq_len},
            {"num_channels", c.num_channels},
            {"sample_rate_hz", c.sample_rate_hz},
            {"class_proportions", c.class_proportions},
            {"min_segment_len", c.min_segment_len},
            {"max_segment_len", c.max_segment_len},
            {"background_freq_hz", c.background_freq_hz},
            {"background_amp", c.background_amp},
            {"noise_sigma", c.noise_sigma},
            {"foreground_freq_hz", c.foreground_freq_hz},
            {"foreground_amp", c.foreground_amp}};
}

SynthConfig synth_config_from_json(const nlohmann::json& j) {
    SynthConfig c;
    c.num_windows = j.value("num_windows", c.num_windows);
    c.seq_len = j.value("seq_len", c.seq_len);
    c.num_channels = j.value("num_channels", c.num_channels);
    c.sample_rate_hz = j.value("sample_rate_hz", c.sample_rate_hz);
    c.class_proportions = j.value("class_proportions", c.class_proportions);
    c.min_segment_len = j.value("min_segment_len", c.min_segment_len);
    c.max_segment_len = j.value("max_segment_len", c.max_segment_len);
    c.background_freq_hz = j.value("background_freq_hz", c.background_freq_hz);
    c.background_amp = j.value("background_amp", c.background_amp);
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.foreground_freq_hz = j.value("foreground_freq_hz", c.foreground_freq_hz);
    c.foreground_amp = j.value("foreground_amp", c.foreground_amp);
    validate(c);
    return c;
}

namespace {

constexpr double kTau = 6.283185307179586476925286766559;

// fundamental plus a weaker second harmonic; phases decorrelate the axes
double tone(double t, double freq, double amp, double phase1, double phase2) {
    return amp * (std::sin(kTau * freq * t + phase1) + 0.3 * std::sin(2.0 * kTau * freq * t + phase2));
}

}  // namespace

SequenceDataset synth_weak(const SynthConfig& config, std::uint64_t seed) {
    validate(config);
    const std::size_t n = config.num_windows;
    const std::size_t c_n = config.num_channels;
    const std::size_t l = config.seq_len;

    SequenceDataset ds;
    ds.num_channels = c_n;
    ds.seq_len = l;
    ds.sample_rate_hz = config.sample_rate_hz;
    ds.class_names = {"going_upstairs", "going_downstairs", "jumping", "jogging"};
    ds.channel_names = {"acc_x", "acc_y", "acc_z"};
    ds.channel_names.resize(c_n, "acc_extra");
    ds.data.resize(n * c_n * l);
    ds.labels.resize(n);
    ds.segments.resize(n);

    const double dt = 1.0 / config.sample_rate_hz;
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng(Rng::mix(seed, i));

        const double pick = rng.uniform();
        int label = 0;
        double acc = 0.0;
        for (std::size_t k = 0; k < config.class_proportions.size(); ++k) {
            acc += config.class_proportions[k];
            if (pick < acc) {
                label = static_cast<int>(k);
                break;
            }
            label = static_cast<int>(config.class_proportions.size()) - 1;
        }
        ds.labels[i] = label;

        const std::size_t seg_len =
            config.min_segment_len +
            rng.below(config.max_segment_len - config.min_segment_len + 1);
        const std::size_t seg_start = rng.below(l - seg_len + 1);
        ds.segments[i] = {{seg_start, seg_start + seg_len}};

        const double fg_freq = config.foreground_freq_hz[static_cast<std::size_t>(label)];
        const double fg_amp = config.foreground_amp[static_cast<std::size_t>(label)];
        const bool bursty = label == 2;  // jumping comes in bursts
        const double burst_phase = rng.uniform();

        for (std::size_t c = 0; c < c_n; ++c) {
            const double bg_p1 = rng.uniform(0.0, kTau);
            const double bg_p2 = rng.uniform(0.0, kTau);
            const double fg_p1 = rng.uniform(0.0, kTau);
            const double fg_p2 = rng.uniform(0.0, kTau);
            double* row = ds.data.data() + (i * c_n + c) * l;
            for (std::size_t t = 0; t < l; ++t) {
                const double time = static_cast<double>(t) * dt;
                double v;
                if (t >= seg_start && t < seg_start + seg_len) {
                    v = tone(time, fg_freq, fg_amp, fg_p1, fg_p2);
                    if (bursty) {
                        const double cycle = time * 1.0 + burst_phase;  // 1 Hz burst rate
                        const double frac = cycle - std::floor(cycle);
                        v *= frac < 0.45 ? 1.0 : 0.15;
                    }
                } else {
                    v = tone(time, config.background_freq_hz, config.background_amp, bg_p1, bg_p2);
                }
                row[t] = v + config.noise_sigma * rng.normal();
            }
        }
    }
    return ds;
}

// ---------------- splits ----------------

SplitIndices split_indices(std::size_t n, const std::array<double, 3>& fractions,
                           std::uint64_t seed) {
    double sum = 0.0;
    for (double f : fractions) {
        if (f < 0.0) throw std::invalid_argument("split: negative fraction");
        sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("split: fractions must sum to 1");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(Rng::mix(seed, 0x5B117));
    for (std::size_t i = n; i > 1; --i) {  // Fisher-Yates, fixed draw sequence
        const std::size_t j = rng.below(i);
        std::swap(order[i - 1], order[j]);
    }

    const std::size_t n_train = static_cast<std::size_t>(fractions[0] * static_cast<double>(n));
    const std::size_t n_val = static_cast<std::size_t>(fractions[1] * static_cast<double>(n));
    SplitIndices s;
    s.train.assign(order.begin(), order.begin() + n_train);
    s.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
    s.test.assign(order.begin() + n_train + n_val, order.end());
    return s;
}

DatasetSplits split(const SequenceDataset& ds, const std::array<double, 3>& fractions,
                    std::uint64_t seed) {
    const SplitIndices idx = split_indices(ds.size(), fractions, seed);
    return {ds.subset(idx.train), ds.subset(idx.val), ds.subset(idx.test)};
}

// ---------------- persistence ----------------

namespace {

static_assert(sizeof(double) == 8);

void write_le64(std::ofstream& out, const double* values, std::size_t count) {
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(values), static_cast<std::streamsize>(count * 8));
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            auto bits = std::bit_cast<std::uint64_t>(values[i]);
            char buf[8];
            for (int b = 0; b < 8; ++b) buf[b] = static_cast<char>((bits >> (8 * b)) & 0xff);
            out.write(buf, 8);
        }
    }
}

void read_le64(std::ifstream& in, double* values, std::size_t count) {
    if constexpr (std::endian::native == std::endian::little) {
        in.read(reinterpret_cast<char*>(values), static_cast<std::streamsize>(count * 8));
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            char buf[8];
            in.read(buf, 8);
            std::uint64_t bits = 0;
            for (int b = 0; b < 8; ++b) {
                bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[b])) << (8 * b);
            }
            values[i] = std::bit_cast<double>(bits);
        }
    }
}

}  // namespace

void save_synth_dataset(const SequenceDataset& ds, const std::string& prefix,
                        const SynthConfig& config, std::uint64_t seed) {
    {
        std::ofstream out(prefix + ".f64", std::ios::binary);
        if (!out) throw std::runtime_error("save_synth_dataset: cannot open " + prefix + ".f64");
        write_le64(out, ds.data.data(), ds.data.size());
        if (!out) throw std::runtime_error("save_synth_dataset: write failed");
    }
    nlohmann::json segs = nlohmann::json::array();
    for (const auto& per_window : ds.segments) {
        nlohmann::json w = nlohmann::json::array();
        for (const Interval& s : per_window) w.push_back({{"start", s.begin}, {"end", s.end}});
        segs.push_back(w);
    }
    nlohmann::json j = {{"N", ds.size()},
                        {"C", ds.num_channels},
                        {"L", ds.seq_len},
                        {"labels", ds.labels},
                        {"segments", segs},
                        {"class_names", ds.class_names},
                        {"seed", seed},
                        {"config", to_json(config)}};
    std::ofstream out(prefix + ".json");
    if (!out) throw std::runtime_error("save_synth_dataset: cannot open " + prefix + ".json");
    out << j.dump(2) << '\n';
    if (!out) throw std::runtime_error("save_synth_dataset: write failed");
}

SequenceDataset load_synth_dataset(const std::string& prefix) {
    std::ifstream meta(prefix + ".json");
    if (!meta) throw std::runtime_error("load_synth_dataset: cannot open " + prefix + ".json");
    nlohmann::json j = nlohmann::json::parse(meta);

    SequenceDataset ds;
    const std::size_t n = j.at("N").get<std::size_t>();
    ds.num_channels = j.at("C").get<std::size_t>();
    ds.seq_len = j.at("L").get<std::size_t>();
    ds.labels = j.at("labels").get<std::vector<int>>();
    ds.class_names = j.at("class_names").get<std::vector<std::string>>();
    const SynthConfig config = synth_config_from_json(j.at("config"));
    ds.sample_rate_hz = config.sample_rate_hz;
    ds.channel_names = {"acc_x", "acc_y", "acc_z"};
    ds.channel_names.resize(ds.num_channels, "acc_extra");
    for (const auto& w : j.at("segments")) {
        std::vector<Interval> per_window;
        for (const auto& s : w) {
            per_window.push_back({s.at("start").get<std::size_t>(), s.at("end").get<std::size_t>()});
        }
        ds.segments.push_back(std::move(per_window));
    }
    if (ds.labels.size() != n || ds.segments.size() != n) {
        throw std::runtime_error("load_synth_dataset: sidecar counts inconsistent with N");
    }

    std::ifstream in(prefix + ".f64", std::ios::binary);
    if (!in) throw std::runtime_error("load_synth_dataset: cannot open " + prefix + ".f64");
    ds.data.resize(n * ds.num_channels * ds.seq_len);
    read_le64(in, ds.data.data(), ds.data.size());
    if (!in) throw std::runtime_error("load_synth_dataset: data file truncated");
    char extra;
    if (in.read(&extra, 1)) throw std::runtime_error("load_synth_dataset: trailing bytes in data file");
    ds.check();
    return ds;
}

std::uint64_t synth_sidecar_seed(const std::string& prefix) {
    std::ifstream meta(prefix + ".json");
    if (!meta) throw std::runtime_error("synth_sidecar_seed: cannot open " + prefix + ".json");
    nlohmann::json j = nlohmann::json::parse(meta);
    return j.at("seed").get<std::uint64_t>();
}

}  // namespace har
