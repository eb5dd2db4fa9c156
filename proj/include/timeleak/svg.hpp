#pragma once

#include <algorithm>
#include <cstdio>
#include <string>
#include <vector>

#include "timeleak/sweep.hpp"

namespace timeleak {

/// Line plot of test SSE against k with the selected k marked.
inline std::string sse_plot_svg(const SweepResult& sweep) {
  constexpr double kWidth = 480, kHeight = 320, kMargin = 48;
  std::vector<double> sse;
  for (const auto& r : sweep.records) sse.push_back(r.test_sse);
  const double top = sse.empty() ? 1.0 : std::max(*std::max_element(sse.begin(), sse.end()), 1e-12);
  const double span_k = std::max<double>(1.0, static_cast<double>(sse.size()) - 1.0);
  auto px = [&](std::size_t k) { return kMargin + (kWidth - 2 * kMargin) * static_cast<double>(k) / span_k; };
  auto py = [&](double v) { return kHeight - kMargin - (kHeight - 2 * kMargin) * v / top; };

  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" font-family=\"sans-serif\" "
                "font-size=\"12\">\n",
                kWidth, kHeight);
  out += buf;
  std::snprintf(buf, sizeof buf,
                "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n"
                "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n",
                kMargin, kHeight - kMargin, kWidth - kMargin, kHeight - kMargin, kMargin, kMargin, kMargin,
                kHeight - kMargin);
  out += buf;
  std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">k</text>\n", kWidth / 2,
                kHeight - 10);
  out += buf;
  std::snprintf(buf, sizeof buf, "<text x=\"12\" y=\"%.1f\" transform=\"rotate(-90 12 %.1f)\">test SSE</text>\n",
                kHeight / 2, kHeight / 2);
  out += buf;

  std::string points;
  for (std::size_t k = 0; k < sse.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%s%.1f,%.1f", k ? " " : "", px(k), py(sse[k]));
    points += buf;
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%zu</text>\n", px(k),
                  kHeight - kMargin + 16, k);
    out += buf;
  }
  out += "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"" + points + "\"/>\n";
  if (sweep.k_star < sse.size()) {
    std::snprintf(buf, sizeof buf,
                  "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"6\" fill=\"none\" stroke=\"crimson\" stroke-width=\"2\"/>\n"
                  "<text x=\"%.1f\" y=\"%.1f\" fill=\"crimson\">k*=%zu</text>\n",
                  px(sweep.k_star), py(sse[sweep.k_star]), px(sweep.k_star) + 8, py(sse[sweep.k_star]) - 8,
                  sweep.k_star);
    out += buf;
  }
  out += "</svg>\n";
  return out;
}

}  // namespace timeleak
