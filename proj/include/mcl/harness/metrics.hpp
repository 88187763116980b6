#pragma once

// Metrics CSV: one row per logging interval, columns
//   step,epoch,lr,ema_m,total_loss,loss_l0..loss_l{S-1},pos_cos,neg_cos,wall_time
// Loss and cosine columns are means over the interval; step, epoch, lr and
// ema_m are those of the interval's last step.

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mcl {

struct MetricsRow {
    long step = 0;   // steps completed
    long epoch = 0;  // 1-based
    double lr = 0;
    double ema_m = 0;
    double total_loss = 0;
    std::vector<double> level_loss;  // unweighted, by query level
    double pos_cos = 0;
    double neg_cos = 0;
    double wall_time = 0;  // seconds since the run (or resume) started
};

inline std::string metrics_header(int levels) {
    std::string h = "step,epoch,lr,ema_m,total_loss";
    for (int s = 0; s < levels; ++s) h += ",loss_l" + std::to_string(s);
    return h + ",pos_cos,neg_cos,wall_time";
}

inline std::string format_row(const MetricsRow& r) {
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.9g", v);
        return std::string(buf);
    };
    std::string s = std::to_string(r.step) + "," + std::to_string(r.epoch) + "," + num(r.lr) + "," + num(r.ema_m) +
                    "," + num(r.total_loss);
    for (double l : r.level_loss) s += "," + num(l);
    char wt[32];
    std::snprintf(wt, sizeof wt, "%.3f", r.wall_time);
    return s + "," + num(r.pos_cos) + "," + num(r.neg_cos) + "," + wt;
}

/// Averages per-step values and emits a row every `every` steps.
class MetricsAccumulator {
public:
    explicit MetricsAccumulator(long every) : every_(every) {}

    /// Returns true when a row is ready in `out`.
    bool add(const MetricsRow& step_row, MetricsRow& out) {
        if (n_ == 0) {
            sum_ = MetricsRow{};
            sum_.level_loss.assign(step_row.level_loss.size(), 0.0);
        }
        ++n_;
        sum_.total_loss += step_row.total_loss;
        for (std::size_t i = 0; i < step_row.level_loss.size(); ++i) sum_.level_loss[i] += step_row.level_loss[i];
        sum_.pos_cos += step_row.pos_cos;
        sum_.neg_cos += step_row.neg_cos;
        last_ = step_row;
        if (n_ < every_) return false;
        return flush(out);
    }

    /// Emits a partial interval, if any.
    bool flush(MetricsRow& out) {
        if (n_ == 0) return false;
        const double k = static_cast<double>(n_);
        out = last_;
        out.total_loss = sum_.total_loss / k;
        for (std::size_t i = 0; i < out.level_loss.size(); ++i) out.level_loss[i] = sum_.level_loss[i] / k;
        out.pos_cos = sum_.pos_cos / k;
        out.neg_cos = sum_.neg_cos / k;
        n_ = 0;
        return true;
    }

private:
    long every_;
    long n_ = 0;
    MetricsRow sum_, last_;
};

/// Appends rows to a CSV file; writes the header when the file is new or empty.
class MetricsWriter {
public:
    MetricsWriter(const std::string& path, int levels, bool append) : path_(path) {
        bool need_header = true;
        if (append) {
            std::ifstream probe(path);
            need_header = !probe || probe.peek() == std::ifstream::traits_type::eof();
        }
        out_.open(path, append ? std::ios::app : std::ios::trunc);
        if (!out_) throw std::runtime_error("metrics: cannot open " + path);
        if (need_header) out_ << metrics_header(levels) << "\n";
        out_.flush();
    }

    void write(const MetricsRow& r) {
        out_ << format_row(r) << "\n";
        out_.flush();
    }

    const std::string& path() const { return path_; }

private:
    std::string path_;
    std::ofstream out_;
};

/// Rows of a metrics CSV as strings, header first, with the wall_time column
/// dropped (it is the only column that varies between identical runs).
inline std::vector<std::string> read_metrics_without_wall_time(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("metrics: cannot open " + path);
    std::vector<std::string> rows;
    std::string line;
    while (std::getline(in, line)) {
        const auto comma = line.rfind(',');
        rows.push_back(comma == std::string::npos ? line : line.substr(0, comma));
    }
    return rows;
}

/// Parsed numeric rows (header skipped).
inline std::vector<std::vector<double>> read_metrics(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("metrics: cannot open " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        std::vector<double> r;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) r.push_back(std::stod(cell));
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace mcl
