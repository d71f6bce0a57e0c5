#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "taper/error.hpp"

namespace taper::csvio {

inline std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string num(std::size_t v) { return std::to_string(v); }

class Writer {
  public:
    Writer(const std::string& path, const std::vector<std::string>& header) : out_(path) {
        if (!out_) throw FormatError("cannot open " + path + " for writing");
        row(header);
    }

    void row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out_ << ',';
            out_ << cells[i];
        }
        out_ << '\n';
    }

  private:
    std::ofstream out_;
};

}  // namespace taper::csvio
