#include "nvmag/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <sstream>

namespace nvmag {

namespace {

std::string esc(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

std::string f(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

void open(std::ostringstream& os, int w, int h, const std::string& title) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
     << ' ' << h << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << w / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">" << esc(title) << "</text>\n";
}

// Range padded by 10 %, never empty.
std::pair<double, double> padded(double lo, double hi) {
  if (!(hi > lo)) {
    const double c = std::isfinite(lo) ? lo : 0.0;
    const double half = std::max(1e-9, std::abs(c) * 0.1 + 1e-6);
    return {c - half, c + half};
  }
  const double pad = 0.1 * (hi - lo);
  return {lo - pad, hi + pad};
}

struct Panel {
  double x0, y0, w, h;
  double xmin, xmax, ymin, ymax;

  double px(double x) const { return x0 + (x - xmin) / (xmax - xmin) * w; }
  double py(double y) const { return y0 + h - (y - ymin) / (ymax - ymin) * h; }
};

void frame(std::ostringstream& os, const Panel& p, const std::string& xl, const std::string& yl) {
  os << "<rect x=\"" << f(p.x0) << "\" y=\"" << f(p.y0) << "\" width=\"" << f(p.w) << "\" height=\"" << f(p.h)
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = p.xmin + (p.xmax - p.xmin) * i / 4.0;
    const double yv = p.ymin + (p.ymax - p.ymin) * i / 4.0;
    os << "<text x=\"" << f(p.px(xv)) << "\" y=\"" << f(p.y0 + p.h + 14) << "\" text-anchor=\"middle\">" << tick(xv)
       << "</text>\n";
    os << "<text x=\"" << f(p.x0 - 4) << "\" y=\"" << f(p.py(yv) + 4) << "\" text-anchor=\"end\">" << tick(yv)
       << "</text>\n";
  }
  os << "<text x=\"" << f(p.x0 + p.w / 2) << "\" y=\"" << f(p.y0 + p.h + 30) << "\" text-anchor=\"middle\">"
     << esc(xl) << "</text>\n";
  os << "<text x=\"" << f(p.x0 - 44) << "\" y=\"" << f(p.y0 + p.h / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 "
     << f(p.x0 - 44) << ' ' << f(p.y0 + p.h / 2) << ")\">" << esc(yl) << "</text>\n";
}

// Blue -> yellow linear ramp.
std::string ramp(double t) {
  t = std::clamp(t, 0.0, 1.0);
  const int r = static_cast<int>(std::lround(40 + t * (250 - 40)));
  const int g = static_cast<int>(std::lround(60 + t * (230 - 60)));
  const int b = static_cast<int>(std::lround(160 + t * (40 - 160)));
  char buf[16];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
  return buf;
}

}  // namespace

std::string scatter_svg(const std::vector<FieldVector>& points_mt, const std::string& title,
                        const FieldVector* reference_mt) {
  std::ostringstream os;
  const int w = 960;
  const int h = 340;
  open(os, w, h, title);
  const char* names[3] = {"x", "y", "z"};
  const int pairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
  for (int k = 0; k < 3; ++k) {
    const int a = pairs[k][0];
    const int b = pairs[k][1];
    double lo[2] = {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
    double hi[2] = {-lo[0], -lo[1]};
    auto grow = [&](const FieldVector& v) {
      for (int d = 0; d < 2; ++d) {
        const double c = 1e3 * v(d == 0 ? a : b);
        if (!std::isfinite(c)) continue;
        lo[d] = std::min(lo[d], c);
        hi[d] = std::max(hi[d], c);
      }
    };
    for (const auto& p : points_mt) grow(p);
    if (reference_mt) grow(*reference_mt);
    const auto [xmin, xmax] = padded(lo[0], hi[0]);
    const auto [ymin, ymax] = padded(lo[1], hi[1]);
    Panel p{70.0 + 310.0 * k, 40.0, 240.0, 240.0, xmin, xmax, ymin, ymax};
    frame(os, p, std::string("B_") + names[a] + " (uT)", std::string("B_") + names[b] + " (uT)");
    for (const auto& v : points_mt) {
      if (!v.allFinite()) continue;
      os << "<circle cx=\"" << f(p.px(1e3 * v(a))) << "\" cy=\"" << f(p.py(1e3 * v(b)))
         << "\" r=\"2.5\" fill=\"#1f5fa8\" fill-opacity=\"0.6\"/>\n";
    }
    if (reference_mt) {
      const double cx = p.px(1e3 * (*reference_mt)(a));
      const double cy = p.py(1e3 * (*reference_mt)(b));
      os << "<path d=\"M" << f(cx - 6) << ' ' << f(cy) << "H" << f(cx + 6) << "M" << f(cx) << ' ' << f(cy - 6) << "V"
         << f(cy + 6) << "\" stroke=\"#c0392b\" stroke-width=\"2\"/>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

std::string heatmap_svg(const Eigen::MatrixXd& values, const std::vector<std::string>& row_labels,
                        const std::vector<std::string>& col_labels, const std::string& row_title,
                        const std::string& col_title, const std::string& title) {
  const int rows = static_cast<int>(values.rows());
  const int cols = static_cast<int>(values.cols());
  const double cell_w = std::clamp(560.0 / std::max(1, cols), 18.0, 80.0);
  const double cell_h = std::clamp(320.0 / std::max(1, rows), 18.0, 60.0);
  const double x0 = 80.0;
  const double y0 = 40.0;
  const int w = static_cast<int>(x0 + cell_w * cols + 120);
  const int h = static_cast<int>(y0 + cell_h * rows + 60);
  std::ostringstream os;
  open(os, w, h, title);

  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (std::isfinite(values(r, c))) {
        lo = std::min(lo, values(r, c));
        hi = std::max(hi, values(r, c));
      }
    }
  }
  const bool any = std::isfinite(lo);
  const double span = any && hi > lo ? hi - lo : 1.0;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const double v = values(r, c);
      const std::string color = std::isfinite(v) ? ramp((v - lo) / span) : "#bbbbbb";
      os << "<rect x=\"" << f(x0 + c * cell_w) << "\" y=\"" << f(y0 + r * cell_h) << "\" width=\"" << f(cell_w)
         << "\" height=\"" << f(cell_h) << "\" fill=\"" << color << "\"><title>" << tick(v) << "</title></rect>\n";
    }
    if (r < static_cast<int>(row_labels.size())) {
      os << "<text x=\"" << f(x0 - 4) << "\" y=\"" << f(y0 + (r + 0.5) * cell_h + 4) << "\" text-anchor=\"end\">"
         << esc(row_labels[static_cast<std::size_t>(r)]) << "</text>\n";
    }
  }
  for (int c = 0; c < cols && c < static_cast<int>(col_labels.size()); ++c) {
    os << "<text x=\"" << f(x0 + (c + 0.5) * cell_w) << "\" y=\"" << f(y0 + rows * cell_h + 14)
       << "\" text-anchor=\"middle\">" << esc(col_labels[static_cast<std::size_t>(c)]) << "</text>\n";
  }
  os << "<text x=\"" << f(x0 + cols * cell_w / 2) << "\" y=\"" << f(y0 + rows * cell_h + 34)
     << "\" text-anchor=\"middle\">" << esc(col_title) << "</text>\n";
  os << "<text x=\"16\" y=\"" << f(y0 + rows * cell_h / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << f(y0 + rows * cell_h / 2) << ")\">" << esc(row_title) << "</text>\n";

  // Color bar.
  const double bx = x0 + cols * cell_w + 20;
  const double bh = cell_h * rows;
  for (int i = 0; i < 32; ++i) {
    os << "<rect x=\"" << f(bx) << "\" y=\"" << f(y0 + bh * (31 - i) / 32.0) << "\" width=\"16\" height=\""
       << f(bh / 32.0 + 0.5) << "\" fill=\"" << ramp(i / 31.0) << "\"/>\n";
  }
  if (any) {
    os << "<text x=\"" << f(bx + 20) << "\" y=\"" << f(y0 + 10) << "\">" << tick(hi) << "</text>\n";
    os << "<text x=\"" << f(bx + 20) << "\" y=\"" << f(y0 + bh) << "\">" << tick(lo) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string degeneracy_svg(const std::vector<SphereConstraint>& spheres, const DegeneracyResult& result,
                           const FieldVector& truth_mt, const std::string& title) {
  double xmin = truth_mt.x();
  double xmax = truth_mt.x();
  double ymin = truth_mt.y();
  double ymax = truth_mt.y();
  for (const auto& s : spheres) {
    xmin = std::min(xmin, s.center.x() - s.radius);
    xmax = std::max(xmax, s.center.x() + s.radius);
    ymin = std::min(ymin, s.center.y() - s.radius);
    ymax = std::max(ymax, s.center.y() + s.radius);
  }
  // Equal aspect.
  const double cx = 0.5 * (xmin + xmax);
  const double cy = 0.5 * (ymin + ymax);
  const double half = 0.55 * std::max({xmax - xmin, ymax - ymin, 1e-6});
  Panel p{70.0, 40.0, 420.0, 420.0, cx - half, cx + half, cy - half, cy + half};
  std::ostringstream os;
  open(os, 540, 520, title);
  frame(os, p, "B_x (mT)", "B_y (mT)");
  const double scale = p.w / (p.xmax - p.xmin);
  for (const auto& s : spheres) {
    os << "<circle cx=\"" << f(p.px(s.center.x())) << "\" cy=\"" << f(p.py(s.center.y())) << "\" r=\""
       << f(s.radius * scale) << "\" fill=\"none\" stroke=\"#7f8c8d\" stroke-dasharray=\"4 3\"/>\n";
    os << "<circle cx=\"" << f(p.px(s.center.x())) << "\" cy=\"" << f(p.py(s.center.y()))
       << "\" r=\"2\" fill=\"#7f8c8d\"/>\n";
  }
  if (result.ring) {
    os << "<polyline fill=\"none\" stroke=\"#8e44ad\" stroke-width=\"2\" points=\"";
    for (int i = 0; i <= 120; ++i) {
      const Eigen::Vector3d q = result.ring->point(2.0 * std::numbers::pi * i / 120.0);
      os << f(p.px(q.x())) << ',' << f(p.py(q.y())) << ' ';
    }
    os << "\"/>\n";
  }
  for (const auto& s : result.solutions) {
    os << "<circle cx=\"" << f(p.px(s.x())) << "\" cy=\"" << f(p.py(s.y()))
       << "\" r=\"5\" fill=\"none\" stroke=\"#1f5fa8\" stroke-width=\"2\"/>\n";
  }
  const double tx = p.px(truth_mt.x());
  const double ty = p.py(truth_mt.y());
  os << "<path d=\"M" << f(tx - 6) << ' ' << f(ty) << "H" << f(tx + 6) << "M" << f(tx) << ' ' << f(ty - 6) << "V"
     << f(ty + 6) << "\" stroke=\"#c0392b\" stroke-width=\"2\"/>\n";
  os << "<text x=\"80\" y=\"505\">" << esc("manifold: " + to_string(result.kind)) << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace nvmag
