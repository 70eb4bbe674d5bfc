#include "persurv/survival.hpp"

#include <fstream>
#include <sstream>

#include "persurv/error.hpp"
#include "persurv/format.hpp"

namespace persurv {

namespace {

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_double(const std::string& s, std::size_t line_no) {
  try {
    return parse_double_cell(s);
  } catch (const Error&) {
    throw Error(ErrorCode::kParseError,
                "survival CSV line " + std::to_string(line_no) + ": bad number '" + s + "'");
  }
}

}  // namespace

SurvivalTable parse_survival_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  SurvivalTable table;
  std::size_t line_no = 0;
  std::size_t columns = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto cells = split_row(line);
    if (columns == 0) {
      if (cells.size() < 3 || cells[0] != "patient_id" || cells[1] != "time" ||
          cells[2] != "event") {
        throw Error(ErrorCode::kParseError,
                    "survival CSV header must start with patient_id,time,event");
      }
      columns = cells.size();
      table.covariate_names.assign(cells.begin() + 3, cells.end());
      continue;
    }
    if (cells.size() != columns) {
      throw Error(ErrorCode::kRaggedRows, "survival CSV line " + std::to_string(line_no) +
                                              " has " + std::to_string(cells.size()) +
                                              " cells, expected " + std::to_string(columns));
    }
    SurvivalRecord rec;
    rec.patient_id = cells[0];
    rec.time = parse_double(cells[1], line_no);
    if (!(rec.time > 0.0)) {
      throw Error(ErrorCode::kParseError,
                  "survival CSV line " + std::to_string(line_no) + ": time must be positive");
    }
    const double ev = parse_double(cells[2], line_no);
    if (ev != 0.0 && ev != 1.0) {
      throw Error(ErrorCode::kParseError,
                  "survival CSV line " + std::to_string(line_no) + ": event must be 0 or 1");
    }
    rec.event = ev == 1.0;
    for (std::size_t c = 3; c < cells.size(); ++c) {
      rec.covariates.push_back(parse_double(cells[c], line_no));
    }
    table.records.push_back(std::move(rec));
  }
  if (columns == 0) throw Error(ErrorCode::kParseError, "survival CSV has no header");
  return table;
}

SurvivalTable load_survival_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kMissingFile, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_survival_csv(ss.str());
}

std::string format_survival_csv(const SurvivalTable& table) {
  std::string out = "patient_id,time,event";
  for (const auto& name : table.covariate_names) out += "," + name;
  out += "\n";
  for (const auto& rec : table.records) {
    out += rec.patient_id + "," + format_double(rec.time) + "," + (rec.event ? "1" : "0");
    for (double v : rec.covariates) out += "," + format_double(v);
    out += "\n";
  }
  return out;
}

}  // namespace persurv
