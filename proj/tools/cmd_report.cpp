#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <vector>

#include "commands.hpp"
#include "patchforge/common.hpp"

namespace patchforge::cli {

namespace {

struct Column {
  std::string name;
  std::vector<double> values;  // NaN for blanks/non-numeric cells
};

std::vector<Column> read_csv(const std::string& file) {
  std::ifstream in(file);
  if (!in) fail(strfmt("report: cannot open '%s'", file.c_str()));
  std::string line;
  check(static_cast<bool>(std::getline(in, line)), strfmt("report: '%s' is empty", file.c_str()));
  for (unsigned char c : line)
    if (c != '\r' && (c < 0x20 || c > 0x7e))
      fail(strfmt("report: '%s' does not look like a CSV file", file.c_str()));
  std::vector<Column> cols;
  {
    std::istringstream hs(line);
    std::string name;
    while (std::getline(hs, name, ',')) cols.push_back({name, {}});
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    size_t c = 0;
    while (std::getline(ls, cell, ',') && c < cols.size()) {
      double v = std::nan("");
      try {
        if (!cell.empty()) v = std::stod(cell);
      } catch (const std::exception&) {
      }
      cols[c++].values.push_back(v);
    }
    while (c < cols.size()) cols[c++].values.push_back(std::nan(""));
  }
  return cols;
}

void ascii_plot(const Column& x, const Column& y, std::FILE* out) {
  constexpr int W = 64, H = 12;
  double ymin = std::numeric_limits<double>::infinity(), ymax = -ymin;
  for (double v : y.values)
    if (std::isfinite(v)) {
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  if (!std::isfinite(ymin)) return;
  const double span = (ymax == ymin) ? 1.0 : ymax - ymin;
  std::vector<std::string> canvas(H, std::string(W, ' '));
  const size_t n = y.values.size();
  for (size_t i = 0; i < n; ++i) {
    if (!std::isfinite(y.values[i])) continue;
    const int cx = static_cast<int>(static_cast<double>(i) / static_cast<double>(std::max<size_t>(1, n - 1)) * (W - 1));
    const int cy = static_cast<int>((y.values[i] - ymin) / span * (H - 1));
    canvas[static_cast<size_t>(H - 1 - cy)][static_cast<size_t>(cx)] = '*';
  }
  std::fprintf(out, "%s vs %s  [%g .. %g]\n", y.name.c_str(), x.name.c_str(), ymin, ymax);
  for (const auto& row : canvas) std::fprintf(out, "  |%s|\n", row.c_str());
  std::fprintf(out, "\n");
}

void run_report(const std::vector<std::string>& files, const std::string& out_file) {
  std::FILE* out = stdout;
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> holder(nullptr, &std::fclose);
  if (!out_file.empty()) {
    out = std::fopen(out_file.c_str(), "w");
    if (!out) fail(strfmt("report: cannot write '%s'", out_file.c_str()));
    holder.reset(out);
  }
  for (const std::string& file : files) {
    const auto cols = read_csv(file);
    check(!cols.empty(), strfmt("report: '%s' has no columns", file.c_str()));
    std::fprintf(out, "== %s (%zu rows)\n", file.c_str(), cols[0].values.size());
    std::fprintf(out, "%-12s %12s %12s %12s %12s\n", "column", "first", "last", "min", "max");
    for (const auto& c : cols) {
      double first = std::nan(""), last = std::nan(""), mn = std::nan(""), mx = std::nan("");
      for (double v : c.values)
        if (std::isfinite(v)) {
          if (!std::isfinite(first)) first = v;
          last = v;
          mn = std::isfinite(mn) ? std::min(mn, v) : v;
          mx = std::isfinite(mx) ? std::max(mx, v) : v;
        }
      std::fprintf(out, "%-12s %12.5g %12.5g %12.5g %12.5g\n", c.name.c_str(), first, last, mn, mx);
    }
    std::fprintf(out, "\n");
    for (size_t c = 1; c < cols.size(); ++c) ascii_plot(cols[0], cols[c], out);
  }
}

}  // namespace

void register_report(CLI::App& app) {
  auto files = std::make_shared<std::vector<std::string>>();
  auto out_file = std::make_shared<std::string>();
  CLI::App* cmd = app.add_subcommand("report", "render metrics CSVs as tables and ASCII plots");
  cmd->add_option("--csv", *files, "metrics CSV file(s)")->required()->expected(-1);
  cmd->add_option("--out", *out_file, "write the report to a file instead of stdout");
  cmd->callback([files, out_file] { run_report(*files, *out_file); });
}

}  // namespace patchforge::cli
