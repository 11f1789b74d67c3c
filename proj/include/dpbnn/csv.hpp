#pragma once

#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dpbnn {

// Minimal CSV writer with a fixed header row. Doubles are written with %.17g
// so re-runs reproduce files bit-identically.
class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::vector<std::string>& header)
        : out_(path) {
        if (!out_) throw std::runtime_error("cannot write " + path);
        for (std::size_t i = 0; i < header.size(); ++i)
            out_ << (i ? "," : "") << header[i];
        out_ << "\n";
        cols_ = header.size();
    }

    CsvWriter& field(double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return field(std::string(buf));
    }

    CsvWriter& field(long v) { return field(std::to_string(v)); }
    CsvWriter& field(int v) { return field(std::to_string(v)); }

    CsvWriter& field(const std::string& s) {
        out_ << (col_ ? "," : "") << s;
        ++col_;
        return *this;
    }

    void end_row() {
        if (col_ != cols_) throw std::logic_error("csv row width mismatch");
        out_ << "\n";
        col_ = 0;
    }

private:
    std::ofstream out_;
    std::size_t cols_ = 0;
    std::size_t col_ = 0;
};

}  // namespace dpbnn
