#pragma once

// JSON Lines trace ingestion and serialization, score-config files, and
// report / metric / diagnostics emission.
//
// Trace records serialize to one compact JSON object per line with keys in
// lexicographic order and shortest round-trip numbers. Unknown members are
// kept (TokenStep::extras, GenerationRecord::extras) and written back, so a
// canonically formatted line survives parse + serialize byte for byte.
// Log-probabilities of -inf are written as null.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hallufield/eval_harness.hpp"
#include "hallufield/trace_model.hpp"

namespace hallufield {

std::string serialize_record(const GenerationRecord& record);

/// Throws Error(Parse) when the line is not a schema-valid trace record.
GenerationRecord parse_record(std::string_view line);

namespace detail {
/// DOM-based reader accepting any JSON spelling. parse_record() uses a strict
/// scanner for canonical lines and falls back to this for everything else.
GenerationRecord parse_record_generic(std::string_view line);
}  // namespace detail

/// Base record first, then perturbations in ascending delta_t, in stored order.
void write_traces(std::ostream& out, std::span<const QueryBundle> bundles);

struct ParseIssue {
  std::string code;  // DUPLICATE_BASE, NO_BASE, SCHEMA_VIOLATION, NON_CONTIGUOUS_QUERY
  std::string query_id;
  std::size_t line = 0;  // 1-based; 0 when not tied to one line
  std::string message;

  friend bool operator==(const ParseIssue&, const ParseIssue&) = default;
};

/// Streaming reader: holds one query's records at a time. A query's lines
/// must be contiguous; a query id that reappears later is reported as
/// NON_CONTIGUOUS_QUERY and its late records are dropped. Queries with a
/// missing or duplicated base record are reported and skipped.
class TraceReader {
 public:
  explicit TraceReader(std::istream& in) : in_(in) {}

  std::optional<QueryBundle> next();
  const std::vector<ParseIssue>& issues() const noexcept { return issues_; }

 private:
  struct Pending {
    std::size_t line;
    GenerationRecord record;
  };

  bool read_record(Pending& out);

  std::istream& in_;
  std::size_t line_no_ = 0;
  std::optional<Pending> lookahead_;
  std::set<std::string> finished_;
  std::vector<ParseIssue> issues_;
};

struct ParseResult {
  std::vector<QueryBundle> bundles;  // in order of first appearance
  std::vector<ParseIssue> issues;

  bool clean() const noexcept { return issues.empty(); }
};

/// Streaming parse over TraceReader.
ParseResult parse_traces(std::istream& in);

/// Whole-input parse that groups records by query id regardless of order.
/// Agrees with parse_traces() on inputs whose queries are contiguous.
ParseResult parse_traces_grouped(std::istream& in);

/// Sidecar labels: `query_id,label` rows, optional header, label in
/// {true,false,1,0}. Throws Error(Parse) on a malformed row.
std::map<std::string, bool> read_labels_csv(std::istream& in);
void write_labels_csv(std::ostream& out, std::span<const QueryBundle> bundles);

/// Sidecar labels override bundle labels; returns one warning per conflict.
std::vector<std::string> apply_labels(std::vector<QueryBundle>& bundles,
                                      const std::map<std::string, bool>& labels);

/// Config JSON uses ScoreConfig field names; absent fields keep defaults.
/// Throws Error(Parse) on unknown fields or bad values.
ScoreConfig parse_config(std::string_view json_text);
std::string config_to_json(const ScoreConfig& config);

std::string reports_to_json(std::span<const ScoreReport> reports,
                            std::span<const MetricRow> metrics = {});

/// Header: query_id,label,status,delta_f,delta_th_total,delta_u,se,
/// hallufield_se,re,ce,se_excluded, then delta_b@<dt>,delta_p@<dt>,
/// delta_th@<dt> for each delta_t. Absent values are empty fields.
std::string reports_to_csv(std::span<const ScoreReport> reports);

/// Reads the output of reports_to_json or reports_to_csv (detected by the
/// first non-blank character). Throws Error(Parse).
std::vector<ScoreReport> parse_reports(std::string_view text);

std::string metrics_to_json(std::span<const MetricRow> metrics);
std::string metrics_to_csv(std::span<const MetricRow> metrics);

/// Header: delta_t,n_hallucinated,n_non_hallucinated, then for each of
/// delta_b, delta_p, delta_th: <sig>_mean_hallucinated,
/// <sig>_mean_non_hallucinated, <sig>_difference, <sig>_auc.
std::string diagnostics_to_csv(std::span<const DiagnosticsRow> rows);

std::string issues_to_json(std::span<const ParseIssue> issues);

/// FNV-1a 64 over the canonical serialization, as 16 hex digits.
std::string digest(std::string_view bytes);
std::string dataset_digest(std::span<const QueryBundle> bundles);

}  // namespace hallufield
