#include "dlisa/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace dlisa::report {

namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 70, kRight = 20, kTop = 40, kBottom = 60;
const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

void write_text(const std::filesystem::path& file, const std::string& text) {
  std::ofstream os(file);
  if (!os) throw std::runtime_error("cannot write " + file.string());
  os << text;
}

}  // namespace

std::string line_chart_svg(const std::vector<Series>& series, const std::string& x_label,
                           const std::string& y_label, const std::string& title) {
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool any = false;
  for (const auto& s : series)
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      if (!any) {
        x0 = x1 = s.x[i];
        y0 = y1 = s.y[i];
        any = true;
      }
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return kTop + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << escape(title)
     << "</text>\n";
  os << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + ph << "\" x2=\"" << kLeft + pw << "\" y2=\"" << kTop + ph
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kTop + ph
     << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double xv = x0 + (x1 - x0) * t / 4.0, yv = y0 + (y1 - y0) * t / 4.0;
    os << "<text x=\"" << px(xv) << "\" y=\"" << kTop + ph + 18 << "\" text-anchor=\"middle\" font-size=\"11\">"
       << std::setprecision(any ? 0 : 2) << xv << "</text>\n"
       << std::setprecision(2);
    os << "<text x=\"" << kLeft - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\" font-size=\"11\">"
       << std::setprecision(3) << yv << "</text>\n"
       << std::setprecision(2);
  }
  os << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kHeight - 16 << "\" text-anchor=\"middle\" font-size=\"13\">"
     << escape(x_label) << "</text>\n";
  os << "<text x=\"18\" y=\"" << kTop + ph / 2 << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 18 "
     << kTop + ph / 2 << ")\">" << escape(y_label) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kColors[k % 5];
    std::ostringstream pts;
    pts << std::fixed << std::setprecision(2);
    std::size_t count = 0;
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      pts << (count++ ? " " : "") << px(s.x[i]) << ',' << py(s.y[i]);
    }
    if (count) os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"" << pts.str()
                  << "\"/>\n";
    os << "<text x=\"" << kLeft + pw - 4 << "\" y=\"" << kTop + 14 + 14 * k << "\" text-anchor=\"end\" font-size=\"11\" fill=\""
       << color << "\">" << escape(s.name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void write_curves_csv(const std::filesystem::path& file, const std::vector<train::EpochRecord>& history) {
  std::ofstream os(file);
  if (!os) throw std::runtime_error("cannot write " + file.string());
  os << "epoch,loss,ref,ctr,dyn,mean_proposals,val_f1\n" << std::setprecision(10);
  for (const auto& r : history) {
    os << r.epoch << ',' << r.loss << ',' << r.ref << ',' << r.ctr << ',' << r.dyn << ',' << r.mean_proposals << ',';
    if (r.val_score) os << *r.val_score;
    os << "\n";
  }
}

std::vector<std::filesystem::path> write_report(const std::filesystem::path& dir,
                                                const std::vector<train::EpochRecord>& history) {
  std::filesystem::create_directories(dir);
  Series loss{"loss", {}, {}}, ref{"ref", {}, {}}, f1{"val F1", {}, {}};
  for (const auto& r : history) {
    const double e = static_cast<double>(r.epoch);
    loss.x.push_back(e);
    loss.y.push_back(r.loss);
    ref.x.push_back(e);
    ref.y.push_back(r.ref);
    if (r.val_score) {
      f1.x.push_back(e);
      f1.y.push_back(*r.val_score);
    }
  }
  const std::vector<std::filesystem::path> files{dir / "curves.csv", dir / "loss.svg", dir / "f1.svg"};
  write_curves_csv(files[0], history);
  write_text(files[1], line_chart_svg({loss, ref}, "epoch", "loss", "Training loss"));
  write_text(files[2], line_chart_svg({f1}, "epoch", "F1", "Validation F1"));
  return files;
}

}  // namespace dlisa::report
