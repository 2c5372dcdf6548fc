#pragma once

// Which counterfacts the model selects, and which tokens line up with a
// fact or a fact/counterfact direction.

#include <map>
#include <string>
#include <vector>

#include "ccprompt/types.hpp"

namespace ccprompt {

struct SelectedSlot {
  Index fact = 0;
  Index counterfact = 0;
  double score = 0.0;
};

/// One prediction as written by eval/analyze, one JSON object per line.
struct PredictionRecord {
  std::string id;
  Index gold = 0;
  Index predicted = 0;
  std::vector<SelectedSlot> selection;  // descending score
};

std::string records_to_jsonl(const std::vector<PredictionRecord>& records);
std::vector<PredictionRecord> records_from_jsonl(const std::string& text);

struct CounterfactRow {
  Index fact = 0;
  Index counterfact = 0;  // mode; ties go to the smaller id
  Index count = 0;        // occurrences of the mode
  std::map<Index, Index> tally;
};

struct CounterfactTable {
  std::vector<CounterfactRow> rows;  // ascending fact
  Index contributing = 0;
};

/// For each record, takes the highest-ranked selected slot whose fact is the
/// gold class and tallies its counterfact under that class.
CounterfactTable counterfact_frequency(const std::vector<PredictionRecord>& records,
                                       bool correct_only);

struct TokenHighlight {
  std::string token;
  double score = 0.0;
  bool highlighted = false;
};

inline constexpr double kDefaultHighlightFactor = 1.02;

/// Cosine of each token state with `direction`; a token is highlighted when
/// its score is strictly greater than factor x mean score.
std::vector<TokenHighlight> highlight_tokens(const std::vector<std::string>& tokens,
                                             const MatrixXd& token_states,
                                             const VectorXd& direction,
                                             double threshold_factor = kDefaultHighlightFactor);

struct ReportCase {
  std::string id;
  std::string title;
  std::vector<TokenHighlight> tokens;
};

struct ReportInput {
  std::vector<std::pair<std::string, std::string>> metadata;
  std::vector<std::string> label_names;
  CounterfactTable table;
  std::vector<ReportCase> cases;
};

enum class ReportFormat { Markdown, Html };

std::string render_report(const ReportInput& input, ReportFormat format = ReportFormat::Markdown);

}  // namespace ccprompt
