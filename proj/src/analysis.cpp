#include "ccprompt/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "json.hpp"

#include "ccprompt/error.hpp"

namespace ccprompt {

using nlohmann::json;

std::string records_to_jsonl(const std::vector<PredictionRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    json sel = json::array();
    for (const auto& s : r.selection) sel.push_back(json::array({s.fact, s.counterfact, s.score}));
    json j{{"id", r.id}, {"gold", r.gold}, {"predicted", r.predicted}, {"selection", sel}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<PredictionRecord> records_from_jsonl(const std::string& text) {
  std::vector<PredictionRecord> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      PredictionRecord r;
      r.id = j.at("id").get<std::string>();
      r.gold = j.at("gold").get<Index>();
      r.predicted = j.at("predicted").get<Index>();
      for (const auto& s : j.at("selection"))
        r.selection.push_back({s.at(0).get<Index>(), s.at(1).get<Index>(), s.at(2).get<double>()});
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ParseError, "records:" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

CounterfactTable counterfact_frequency(const std::vector<PredictionRecord>& records,
                                       bool correct_only) {
  std::map<Index, std::map<Index, Index>> tallies;
  CounterfactTable table;
  for (const auto& r : records) {
    require(!r.selection.empty(), ErrorCode::EmptySelection,
            "record '" + r.id + "' has no selected attributes");
    if (correct_only && r.predicted != r.gold) continue;
    const auto top = std::find_if(r.selection.begin(), r.selection.end(),
                                  [&](const SelectedSlot& s) { return s.fact == r.gold; });
    if (top == r.selection.end()) continue;
    ++tallies[r.gold][top->counterfact];
    ++table.contributing;
  }
  for (auto& [fact, tally] : tallies) {
    CounterfactRow row;
    row.fact = fact;
    for (const auto& [cf, n] : tally)
      if (n > row.count) {
        row.count = n;
        row.counterfact = cf;
      }
    row.tally = std::move(tally);
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::vector<TokenHighlight> highlight_tokens(const std::vector<std::string>& tokens,
                                             const MatrixXd& token_states,
                                             const VectorXd& direction,
                                             double threshold_factor) {
  require(static_cast<Index>(tokens.size()) == token_states.rows(), ErrorCode::LengthMismatch,
          "one state row per token");
  require(token_states.cols() == direction.size(), ErrorCode::DimensionMismatch,
          "token states and direction differ in width");
  const double dnorm = direction.norm();
  require(dnorm > kDegenerateEps, ErrorCode::DegenerateDirection,
          "highlight direction has near-zero norm");
  std::vector<TokenHighlight> out(tokens.size());
  double total = 0.0;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto row = token_states.row(static_cast<Index>(t));
    const double n = row.norm();
    out[t].token = tokens[t];
    out[t].score = n > 0.0 ? row.dot(direction) / (n * dnorm) : 0.0;
    total += out[t].score;
  }
  if (out.empty()) return out;
  const double threshold = threshold_factor * (total / static_cast<double>(out.size()));
  for (auto& h : out) h.highlighted = h.score > threshold;
  return out;
}

// ---------------------------------------------------------------- report

namespace {

std::string escape_html(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string escape_md_cell(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '|') out += "\\|";
    else out += c;
  }
  return out;
}

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

std::string label_name(const ReportInput& in, Index id) {
  if (id >= 0 && id < static_cast<Index>(in.label_names.size()))
    return in.label_names[static_cast<std::size_t>(id)];
  return std::to_string(id);
}

/// Highlighted tokens shade in proportion to score / max highlighted score.
std::string shaded_tokens(const std::vector<TokenHighlight>& tokens) {
  double top = 0.0;
  for (const auto& t : tokens)
    if (t.highlighted) top = std::max(top, std::abs(t.score));
  std::string out;
  for (std::size_t k = 0; k < tokens.size(); ++k) {
    const auto& t = tokens[k];
    const double intensity =
        t.highlighted && top > 0.0 ? std::clamp(t.score / top, 0.0, 1.0) : 0.0;
    if (k) out += ' ';
    out += "<span style=\"background-color: rgba(255, 140, 0, " + fmt("%.3f", intensity) +
           ")\" title=\"" + fmt("%.4f", t.score) + "\">" + escape_html(t.token) + "</span>";
  }
  return out;
}

}  // namespace

std::string render_report(const ReportInput& in, ReportFormat format) {
  std::ostringstream out;
  if (format == ReportFormat::Markdown) {
    out << "# Contrastive attribution report\n\n## Run\n\n";
    if (in.metadata.empty()) out << "_no metadata_\n";
    for (const auto& [k, v] : in.metadata) out << "- **" << k << "**: " << v << "\n";
    out << "\n## Most frequently selected counterfact\n\n";
    if (in.table.rows.empty()) {
      out << "_no contributing instances_\n";
    } else {
      out << "Contributing instances: " << in.table.contributing << "\n\n";
      out << "| Fact | Top selected counterfact | Count | Instances |\n|---|---|---|---|\n";
      for (const auto& row : in.table.rows) {
        Index n = 0;
        for (const auto& [cf, c] : row.tally) n += c;
        out << "| " << escape_md_cell(label_name(in, row.fact)) << " | "
            << escape_md_cell(label_name(in, row.counterfact)) << " | " << row.count << " | " << n
            << " |\n";
      }
    }
    out << "\n## Highlighted tokens\n\n";
    if (in.cases.empty()) out << "_no cases_\n";
    for (const auto& c : in.cases) {
      out << "### " << c.id << ": " << c.title << "\n\n" << shaded_tokens(c.tokens) << "\n\n";
      out << "Highlighted:";
      bool any = false;
      for (const auto& t : c.tokens)
        if (t.highlighted) {
          out << " `" << t.token << "` (" << fmt("%.4f", t.score) << ")";
          any = true;
        }
      out << (any ? "\n\n" : " none\n\n");
    }
    return out.str();
  }

  out << "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n"
      << "<title>Contrastive attribution report</title>\n</head>\n<body>\n"
      << "<h1>Contrastive attribution report</h1>\n<h2>Run</h2>\n<ul>\n";
  for (const auto& [k, v] : in.metadata)
    out << "<li><b>" << escape_html(k) << "</b>: " << escape_html(v) << "</li>\n";
  out << "</ul>\n<h2>Most frequently selected counterfact</h2>\n";
  out << "<table>\n<tr><th>Fact</th><th>Top selected counterfact</th><th>Count</th><th>Instances</th></tr>\n";
  for (const auto& row : in.table.rows) {
    Index n = 0;
    for (const auto& [cf, c] : row.tally) n += c;
    out << "<tr><td>" << escape_html(label_name(in, row.fact)) << "</td><td>"
        << escape_html(label_name(in, row.counterfact)) << "</td><td>" << row.count
        << "</td><td>" << n << "</td></tr>\n";
  }
  out << "</table>\n<h2>Highlighted tokens</h2>\n";
  for (const auto& c : in.cases)
    out << "<h3>" << escape_html(c.id) << ": " << escape_html(c.title) << "</h3>\n<p>"
        << shaded_tokens(c.tokens) << "</p>\n";
  out << "</body>\n</html>\n";
  return out.str();
}

}  // namespace ccprompt
