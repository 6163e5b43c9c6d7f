#pragma once

#include <cstdio>
#include <string>
#include <vector>

namespace midres {

struct ReportRow {
    std::string method;
    double accuracy_percent = 0.0;
};

inline std::string format_percent(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

/// Two-column comparison table, (method, accuracy %). Formatting is fixed so
/// the same rows always render to the same bytes.
inline std::string report_table(const std::vector<ReportRow>& rows) {
    std::size_t width = std::string("Method").size();
    for (const auto& r : rows) width = std::max(width, r.method.size());
    std::string out = "Method";
    out.append(width - 6, ' ');
    out += "  Accuracy\n";
    for (const auto& r : rows) {
        out += r.method;
        out.append(width - r.method.size(), ' ');
        out += "  " + format_percent(r.accuracy_percent) + "%\n";
    }
    return out;
}

inline std::string report_csv(const std::vector<ReportRow>& rows) {
    std::string out = "method,accuracy_percent\n";
    for (const auto& r : rows) {
        out += r.method + "," + format_percent(r.accuracy_percent) + "\n";
    }
    return out;
}

inline std::string loss_history_csv(const std::vector<double>& history) {
    std::string out = "epoch,loss\n";
    char buf[48];
    for (std::size_t i = 0; i < history.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.10g\n", i, history[i]);
        out += buf;
    }
    return out;
}

inline std::string folds_csv(const std::vector<double>& accuracies) {
    std::string out = "fold,val_accuracy\n";
    char buf[48];
    for (std::size_t i = 0; i < accuracies.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.6f\n", i, accuracies[i]);
        out += buf;
    }
    return out;
}

}  // namespace midres
