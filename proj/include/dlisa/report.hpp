#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dlisa/trainer.hpp"

namespace dlisa::report {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

// Standalone SVG line chart with labelled axes. No points draws the axes only.
std::string line_chart_svg(const std::vector<Series>& series, const std::string& x_label,
                           const std::string& y_label, const std::string& title);

// One row per epoch: epoch, loss, ref, ctr, dyn, mean_proposals, val_f1 (blank when not evaluated).
void write_curves_csv(const std::filesystem::path& file, const std::vector<train::EpochRecord>& history);

// curves.csv, loss.svg and f1.svg in `dir`; returns the written paths.
std::vector<std::filesystem::path> write_report(const std::filesystem::path& dir,
                                                const std::vector<train::EpochRecord>& history);

}  // namespace dlisa::report
