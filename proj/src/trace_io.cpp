#include "hallufield/trace_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <functional>
#include <unordered_map>

#include <json.hpp>

#include "hallufield/error.hpp"
#include "numeric.hpp"

namespace hallufield {

using nlohmann::json;

namespace {

[[noreturn]] void schema_error(const std::string& message) {
  throw Error(ErrorCode::Parse, message, R"({"code":"SCHEMA_VIOLATION"})");
}

const json& require(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) schema_error(std::string("missing field '") + key + "'");
  return *it;
}

std::int64_t as_int(const json& v, const char* what) {
  if (!v.is_number_integer()) schema_error(std::string(what) + " must be an integer");
  if (v.is_number_unsigned()) {
    const auto u = v.get<std::uint64_t>();
    if (u > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max())) {
      schema_error(std::string(what) + " is out of range");
    }
    return static_cast<std::int64_t>(u);
  }
  return v.get<std::int64_t>();
}

double as_number(const json& v, const char* what) {
  if (!v.is_number()) schema_error(std::string(what) + " must be a number");
  return v.get<double>();
}

// Log-probabilities may be null (-inf).
double as_logp(const json& v, const char* what) {
  if (v.is_null()) return -std::numeric_limits<double>::infinity();
  return as_number(v, what);
}


std::vector<Candidate> parse_pairs(const json& v, const char* what, bool logps) {
  if (!v.is_array()) schema_error(std::string(what) + " must be an array");
  std::vector<Candidate> out;
  out.reserve(v.size());
  for (const auto& pair : v) {
    if (!pair.is_array() || pair.size() != 2) {
      schema_error(std::string(what) + " entries must be [token, value] pairs");
    }
    Candidate c;
    c.token = as_int(pair[0], what);
    c.value = logps ? as_logp(pair[1], what) : as_number(pair[1], what);
    out.push_back(c);
  }
  return out;
}

std::string collect_extras(const json& obj, std::initializer_list<const char*> known) {
  json extras = json::object();
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return it.key() == k; })) {
      extras[it.key()] = it.value();
    }
  }
  return extras.empty() ? std::string() : extras.dump();
}

TokenStep parse_step(const json& s) {
  if (!s.is_object()) schema_error("steps entries must be objects");
  TokenStep step;
  step.token_id = as_int(require(s, "token"), "token");
  step.rank = as_int(require(s, "rank"), "rank");
  step.logp = as_number(require(s, "logp"), "logp");
  step.topk = parse_pairs(require(s, "topk"), "topk", true);
  if (auto it = s.find("raw_logits_topk"); it != s.end() && !it->is_null()) {
    step.raw_logits_topk = parse_pairs(*it, "raw_logits_topk", false);
  }
  step.extras = collect_extras(s, {"token", "rank", "logp", "topk", "raw_logits_topk"});
  return step;
}

// ---- canonical writer -----------------------------------------------------

void put_string(std::string& out, std::string_view s) {
  const bool plain = std::all_of(s.begin(), s.end(), [](char c) {
    const auto u = static_cast<unsigned char>(c);
    return u >= 0x20 && u < 0x80 && c != '"' && c != '\\';
  });
  if (plain) {
    out += '"';
    out += s;
    out += '"';
  } else {
    out += json(std::string(s)).dump();
  }
}

void put_int(std::string& out, std::int64_t v) {
  char buf[24];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

// Shortest round-trip; integral values keep a ".0"; non-finite becomes null.
void put_double(std::string& out, double v) {
  if (!std::isfinite(v)) {
    out += "null";
    return;
  }
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  const std::string_view text(buf, static_cast<std::size_t>(res.ptr - buf));
  out += text;
  if (text.find_first_of(".e") == std::string_view::npos) out += ".0";
}

void put_pairs(std::string& out, const std::vector<Candidate>& pairs) {
  out += '[';
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (i > 0) out += ',';
    out += '[';
    put_int(out, pairs[i].token);
    out += ',';
    put_double(out, pairs[i].value);
    out += ']';
  }
  out += ']';
}

using FieldWriter = std::function<void(std::string&)>;

// Emits {"key":value,...} with keys in lexicographic order. Extras whose key
// collides with a known field are dropped.
void put_object(std::string& out, std::vector<std::pair<std::string_view, FieldWriter>> fields,
                const std::string& extras) {
  std::vector<std::pair<std::string, std::string>> extra_items;
  if (!extras.empty()) {
    const json e = json::parse(extras);
    for (auto it = e.begin(); it != e.end(); ++it) {
      const bool known = std::any_of(fields.begin(), fields.end(),
                                     [&](const auto& f) { return f.first == it.key(); });
      if (!known) extra_items.emplace_back(it.key(), it.value().dump());
    }
  }
  for (const auto& [k, v] : extra_items) {
    fields.emplace_back(k, [&v = v](std::string& o) { o += v; });
  }
  std::sort(fields.begin(), fields.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  out += '{';
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i > 0) out += ',';
    put_string(out, fields[i].first);
    out += ':';
    fields[i].second(out);
  }
  out += '}';
}

void put_step(std::string& out, const TokenStep& s) {
  if (s.extras.empty()) {
    // Fixed key order: logp, rank, raw_logits_topk, token, topk.
    out += "{\"logp\":";
    put_double(out, s.logp);
    out += ",\"rank\":";
    put_int(out, s.rank);
    if (s.raw_logits_topk) {
      out += ",\"raw_logits_topk\":";
      put_pairs(out, *s.raw_logits_topk);
    }
    out += ",\"token\":";
    put_int(out, s.token_id);
    out += ",\"topk\":";
    put_pairs(out, s.topk);
    out += '}';
    return;
  }
  std::vector<std::pair<std::string_view, FieldWriter>> fields{
      {"logp", [&](std::string& o) { put_double(o, s.logp); }},
      {"rank", [&](std::string& o) { put_int(o, s.rank); }},
      {"token", [&](std::string& o) { put_int(o, s.token_id); }},
      {"topk", [&](std::string& o) { put_pairs(o, s.topk); }},
  };
  if (s.raw_logits_topk) {
    fields.emplace_back("raw_logits_topk", [&](std::string& o) { put_pairs(o, *s.raw_logits_topk); });
  }
  put_object(out, std::move(fields), s.extras);
}

// ---- fast reader ------------------------------------------------------------

// Thrown when a line leaves the canonical subset; the generic reader decides.
struct NotCanonical {};

// Strict reader for the subset of JSON that canonical trace lines use: no
// string escapes, no non-ASCII bytes, no unknown or repeated keys, no nulls
// outside top-k values. Anything else raises NotCanonical.
class FastReader {
 public:
  explicit FastReader(std::string_view text) : s_(text) {}

  GenerationRecord record() {
    GenerationRecord r;
    unsigned seen = 0;
    expect('{');
    if (peek() == '}') throw NotCanonical{};
    do {
      const std::string_view key = string_view_token();
      expect(':');
      const unsigned bit = record_key_bit(key);
      if (seen & bit) throw NotCanonical{};
      seen |= bit;
      switch (bit) {
        case 1u << 0: r.query_id = std::string(string_view_token()); break;
        case 1u << 1: {
          const auto role = string_view_token();
          if (role == "base") {
            r.role = Role::Base;
          } else if (role == "perturbation") {
            r.role = Role::Perturbation;
          } else {
            throw NotCanonical{};
          }
          break;
        }
        case 1u << 2: r.temperature = number(); break;
        case 1u << 3: r.delta_t = number(); break;
        case 1u << 4: r.sample_index = integer(); break;
        case 1u << 5: r.seed = integer(); break;
        case 1u << 6: r.cluster = integer(); break;
        case 1u << 7: r.label = boolean(); break;
        case 1u << 8: steps(r.steps); break;
        default: throw NotCanonical{};
      }
    } while (comma_or('}'));
    ws();
    if (pos_ != s_.size()) throw NotCanonical{};
    constexpr unsigned kRequired = (1u << 0) | (1u << 1) | (1u << 2) | (1u << 3) | (1u << 4) | (1u << 5) | (1u << 8);
    if ((seen & kRequired) != kRequired) throw NotCanonical{};
    if (r.label && r.role != Role::Base) throw NotCanonical{};
    return r;
  }

 private:
  static unsigned record_key_bit(std::string_view k) {
    if (k == "query_id") return 1u << 0;
    if (k == "role") return 1u << 1;
    if (k == "temperature") return 1u << 2;
    if (k == "delta_t") return 1u << 3;
    if (k == "sample_index") return 1u << 4;
    if (k == "seed") return 1u << 5;
    if (k == "cluster") return 1u << 6;
    if (k == "label") return 1u << 7;
    if (k == "steps") return 1u << 8;
    throw NotCanonical{};
  }

  static unsigned step_key_bit(std::string_view k) {
    if (k == "token") return 1u << 0;
    if (k == "rank") return 1u << 1;
    if (k == "logp") return 1u << 2;
    if (k == "topk") return 1u << 3;
    if (k == "raw_logits_topk") return 1u << 4;
    throw NotCanonical{};
  }

  void steps(std::vector<TokenStep>& out) {
    expect('[');
    if (peek() == ']') {
      ++pos_;
      return;
    }
    do {
      TokenStep step;
      unsigned seen = 0;
      expect('{');
      do {
        const std::string_view key = string_view_token();
        expect(':');
        const unsigned bit = step_key_bit(key);
        if (seen & bit) throw NotCanonical{};
        seen |= bit;
        switch (bit) {
          case 1u << 0: step.token_id = integer(); break;
          case 1u << 1: step.rank = integer(); break;
          case 1u << 2: step.logp = number(); break;
          case 1u << 3: pairs(step.topk, true); break;
          default: {
            std::vector<Candidate> raw;
            pairs(raw, false);
            step.raw_logits_topk = std::move(raw);
            break;
          }
        }
      } while (comma_or('}'));
      if ((seen & 0xFu) != 0xFu) throw NotCanonical{};
      out.push_back(std::move(step));
    } while (comma_or(']'));
  }

  void pairs(std::vector<Candidate>& out, bool nullable) {
    expect('[');
    if (peek() == ']') {
      ++pos_;
      return;
    }
    do {
      Candidate c;
      expect('[');
      c.token = integer();
      expect(',');
      if (nullable && peek() == 'n') {
        literal("null");
        c.value = -std::numeric_limits<double>::infinity();
      } else {
        c.value = number();
      }
      expect(']');
      out.push_back(c);
    } while (comma_or(']'));
  }

  void ws() {
    while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t' || s_[pos_] == '\n' || s_[pos_] == '\r')) ++pos_;
  }

  char peek() {
    ws();
    if (pos_ >= s_.size()) throw NotCanonical{};
    return s_[pos_];
  }

  void expect(char c) {
    if (peek() != c) throw NotCanonical{};
    ++pos_;
  }

  bool comma_or(char close) {
    const char c = peek();
    ++pos_;
    if (c == ',') return true;
    if (c == close) return false;
    throw NotCanonical{};
  }

  void literal(std::string_view word) {
    if (s_.substr(pos_, word.size()) != word) throw NotCanonical{};
    pos_ += word.size();
  }

  bool boolean() {
    if (peek() == 't') {
      literal("true");
      return true;
    }
    literal("false");
    return false;
  }

  std::string_view string_view_token() {
    expect('"');
    const std::size_t begin = pos_;
    while (pos_ < s_.size()) {
      const auto c = static_cast<unsigned char>(s_[pos_]);
      if (c == '"') {
        const auto out = s_.substr(begin, pos_ - begin);
        ++pos_;
        return out;
      }
      if (c == '\\' || c < 0x20 || c >= 0x80) throw NotCanonical{};
      ++pos_;
    }
    throw NotCanonical{};
  }

  static bool digit(char c) { return c >= '0' && c <= '9'; }

  // Scans a JSON number; returns its text and whether it is integral.
  std::string_view number_token(bool& integral) {
    ws();
    const std::size_t begin = pos_;
    auto at = [&](std::size_t i) { return i < s_.size() ? s_[i] : '\0'; };
    if (at(pos_) == '-') ++pos_;
    if (at(pos_) == '0') {
      ++pos_;
    } else if (digit(at(pos_))) {
      while (digit(at(pos_))) ++pos_;
    } else {
      throw NotCanonical{};
    }
    integral = true;
    if (at(pos_) == '.') {
      integral = false;
      ++pos_;
      if (!digit(at(pos_))) throw NotCanonical{};
      while (digit(at(pos_))) ++pos_;
    }
    if (at(pos_) == 'e' || at(pos_) == 'E') {
      integral = false;
      ++pos_;
      if (at(pos_) == '+' || at(pos_) == '-') ++pos_;
      if (!digit(at(pos_))) throw NotCanonical{};
      while (digit(at(pos_))) ++pos_;
    }
    return s_.substr(begin, pos_ - begin);
  }

  double number() {
    bool integral = false;
    const auto text = number_token(integral);
    double v = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size()) throw NotCanonical{};
    return v;
  }

  std::int64_t integer() {
    bool integral = false;
    const auto text = number_token(integral);
    if (!integral) throw NotCanonical{};
    std::int64_t v = 0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size()) throw NotCanonical{};
    return v;
  }

  std::string_view s_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_record(const GenerationRecord& r) {
  std::string out;
  std::size_t approx = 256;
  for (const auto& s : r.steps) approx += 48 + 28 * (s.topk.size() + (s.raw_logits_topk ? s.raw_logits_topk->size() : 0));
  out.reserve(approx);
  std::vector<std::pair<std::string_view, FieldWriter>> fields{
      {"delta_t", [&](std::string& o) { put_double(o, r.delta_t); }},
      {"query_id", [&](std::string& o) { put_string(o, r.query_id); }},
      {"role", [&](std::string& o) { put_string(o, role_name(r.role)); }},
      {"sample_index", [&](std::string& o) { put_int(o, r.sample_index); }},
      {"seed", [&](std::string& o) { put_int(o, r.seed); }},
      {"steps",
       [&](std::string& o) {
         o += '[';
         for (std::size_t i = 0; i < r.steps.size(); ++i) {
           if (i > 0) o += ',';
           put_step(o, r.steps[i]);
         }
         o += ']';
       }},
      {"temperature", [&](std::string& o) { put_double(o, r.temperature); }},
  };
  if (r.cluster) fields.emplace_back("cluster", [&](std::string& o) { put_int(o, *r.cluster); });
  if (r.label) fields.emplace_back("label", [&](std::string& o) { o += *r.label ? "true" : "false"; });
  put_object(out, std::move(fields), r.extras);
  return out;
}

namespace detail {

GenerationRecord parse_record_generic(std::string_view line) {
  json obj;
  try {
    obj = json::parse(line);
  } catch (const json::parse_error& e) {
    schema_error(std::string("invalid JSON: ") + e.what());
  }
  if (!obj.is_object()) schema_error("trace line must be a JSON object");

  GenerationRecord r;
  const json& qid = require(obj, "query_id");
  if (!qid.is_string()) schema_error("query_id must be a string");
  r.query_id = qid.get<std::string>();
  const json& role = require(obj, "role");
  if (role == "base") {
    r.role = Role::Base;
  } else if (role == "perturbation") {
    r.role = Role::Perturbation;
  } else {
    schema_error("role must be \"base\" or \"perturbation\"");
  }
  r.temperature = as_number(require(obj, "temperature"), "temperature");
  r.delta_t = as_number(require(obj, "delta_t"), "delta_t");
  r.sample_index = as_int(require(obj, "sample_index"), "sample_index");
  r.seed = as_int(require(obj, "seed"), "seed");
  if (auto it = obj.find("cluster"); it != obj.end() && !it->is_null()) {
    r.cluster = as_int(*it, "cluster");
  }
  if (auto it = obj.find("label"); it != obj.end() && !it->is_null()) {
    if (!it->is_boolean()) schema_error("label must be a boolean");
    if (r.role != Role::Base) schema_error("label is only allowed on base records");
    r.label = it->get<bool>();
  }
  const json& steps = require(obj, "steps");
  if (!steps.is_array()) schema_error("steps must be an array");
  r.steps.reserve(steps.size());
  for (const auto& s : steps) r.steps.push_back(parse_step(s));
  r.extras = collect_extras(obj, {"query_id", "role", "temperature", "delta_t", "sample_index",
                                  "seed", "cluster", "label", "steps"});
  return r;
}

}  // namespace detail

GenerationRecord parse_record(std::string_view line) {
  try {
    return FastReader(line).record();
  } catch (const NotCanonical&) {
    return detail::parse_record_generic(line);
  }
}

void write_traces(std::ostream& out, std::span<const QueryBundle> bundles) {
  for (const auto& b : bundles) {
    out << serialize_record(b.base) << '\n';
    for (const auto& [dt, records] : b.perturbations) {
      for (const auto& r : records) out << serialize_record(r) << '\n';
    }
  }
}

namespace {

struct LineRecord {
  std::size_t line;
  GenerationRecord record;
};

std::optional<QueryBundle> assemble(const std::string& query_id, std::vector<LineRecord>& group,
                                    std::vector<ParseIssue>& issues) {
  QueryBundle bundle;
  bundle.query_id = query_id;
  std::size_t base_line = 0;
  bool ok = true;
  for (auto& lr : group) {
    if (lr.record.role == Role::Base) {
      if (base_line != 0) {
        issues.push_back({"DUPLICATE_BASE", query_id, lr.line,
                          "second base record (first on line " + std::to_string(base_line) + ")"});
        ok = false;
        continue;
      }
      base_line = lr.line;
      bundle.base = std::move(lr.record);
    } else {
      const double dt = lr.record.delta_t;
      bundle.perturbations[dt].push_back(std::move(lr.record));
    }
  }
  if (base_line == 0) {
    issues.push_back({"NO_BASE", query_id, group.empty() ? 0 : group.front().line,
                      "query has no base record"});
    ok = false;
  }
  if (!ok) return std::nullopt;
  bundle.label = bundle.base.label;
  return bundle;
}

bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

}  // namespace

bool TraceReader::read_record(Pending& out) {
  std::string line;
  while (std::getline(in_, line)) {
    ++line_no_;
    if (blank(line)) continue;
    try {
      out.record = parse_record(line);
      out.line = line_no_;
      return true;
    } catch (const Error& e) {
      std::string qid;
      try {
        const json obj = json::parse(line);
        if (obj.is_object() && obj.contains("query_id") && obj["query_id"].is_string()) {
          qid = obj["query_id"].get<std::string>();
        }
      } catch (const json::exception&) {
      }
      issues_.push_back({"SCHEMA_VIOLATION", qid, line_no_, e.what()});
    }
  }
  return false;
}

std::optional<QueryBundle> TraceReader::next() {
  while (true) {
    if (!lookahead_) {
      Pending p;
      if (!read_record(p)) return std::nullopt;
      lookahead_ = std::move(p);
    }
    const std::string qid = lookahead_->record.query_id;
    std::vector<LineRecord> group;
    while (lookahead_ && lookahead_->record.query_id == qid) {
      group.push_back({lookahead_->line, std::move(lookahead_->record)});
      lookahead_.reset();
      Pending p;
      if (read_record(p)) lookahead_ = std::move(p);
    }
    if (finished_.count(qid) != 0) {
      issues_.push_back({"NON_CONTIGUOUS_QUERY", qid, group.front().line,
                         "records for this query appear after another query's records"});
      continue;
    }
    finished_.insert(qid);
    if (auto bundle = assemble(qid, group, issues_)) return bundle;
  }
}

ParseResult parse_traces(std::istream& in) {
  ParseResult result;
  TraceReader reader(in);
  while (auto b = reader.next()) result.bundles.push_back(std::move(*b));
  result.issues = reader.issues();
  return result;
}

ParseResult parse_traces_grouped(std::istream& in) {
  ParseResult result;
  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<LineRecord>> groups;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    try {
      GenerationRecord r = parse_record(line);
      auto [it, inserted] = groups.try_emplace(r.query_id);
      if (inserted) order.push_back(r.query_id);
      it->second.push_back({line_no, std::move(r)});
    } catch (const Error& e) {
      result.issues.push_back({"SCHEMA_VIOLATION", "", line_no, e.what()});
    }
  }
  for (const auto& qid : order) {
    if (auto b = assemble(qid, groups[qid], result.issues)) result.bundles.push_back(std::move(*b));
  }
  return result;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          fields.back() += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else if (c != '\r') {
      fields.back() += c;
    }
  }
  return fields;
}

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return std::isspace(c) == 0; };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::optional<bool> parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "True" || s == "TRUE") return true;
  if (s == "false" || s == "0" || s == "False" || s == "FALSE") return false;
  return std::nullopt;
}

double parse_double(const std::string& s, const char* what) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(ErrorCode::Parse, std::string("bad number for ") + what + ": '" + s + "'");
  }
  return v;
}

std::string opt_num(const std::optional<double>& v) {
  return v ? detail::format_double(*v) : std::string();
}

}  // namespace

std::map<std::string, bool> read_labels_csv(std::istream& in) {
  std::map<std::string, bool> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 2) {
      throw Error(ErrorCode::Parse, "labels line " + std::to_string(line_no) + ": expected query_id,label");
    }
    const std::string value = trim(fields[1]);
    if (line_no == 1 && trim(fields[0]) == "query_id" && value == "label") continue;
    const auto b = parse_bool(value);
    if (!b) {
      throw Error(ErrorCode::Parse, "labels line " + std::to_string(line_no) + ": bad label '" + value + "'");
    }
    labels[fields[0]] = *b;
  }
  return labels;
}

void write_labels_csv(std::ostream& out, std::span<const QueryBundle> bundles) {
  out << "query_id,label\n";
  for (const auto& b : bundles) {
    if (b.label) out << csv_field(b.query_id) << ',' << (*b.label ? "true" : "false") << '\n';
  }
}

std::vector<std::string> apply_labels(std::vector<QueryBundle>& bundles,
                                      const std::map<std::string, bool>& labels) {
  std::vector<std::string> warnings;
  for (auto& b : bundles) {
    auto it = labels.find(b.query_id);
    if (it == labels.end()) continue;
    if (b.label && *b.label != it->second) {
      warnings.push_back("query '" + b.query_id + "': sidecar label overrides trace label");
    }
    b.label = it->second;
  }
  return warnings;
}

// ---------------------------------------------------------------------------
// Config

namespace {

template <typename Enum>
struct EnumName {
  Enum value;
  const char* name;
};

constexpr EnumName<Normalization> kNormalizations[] = {
    {Normalization::PerTokenMean, "per_token_mean"}, {Normalization::Sum, "sum"}};
constexpr EnumName<EntropyTail> kTails[] = {{EntropyTail::LumpResidual, "lump_residual"},
                                            {EntropyTail::RenormalizeTopk, "renormalize_topk"}};
constexpr EnumName<BaseVariationMode> kBaseModes[] = {
    {BaseVariationMode::SampledMean, "sampled_mean"}, {BaseVariationMode::ExactRescale, "exact_rescale"}};
constexpr EnumName<PathEquality> kEqualities[] = {{PathEquality::TokenSequence, "token_sequence"},
                                                  {PathEquality::RankVector, "rank_vector"}};
constexpr EnumName<SequenceProbMode> kSeqProbs[] = {
    {SequenceProbMode::JointProduct, "joint_product"},
    {SequenceProbMode::LengthNormalized, "length_normalized"}};

template <typename Enum, std::size_t N>
const char* enum_name(const EnumName<Enum> (&table)[N], Enum v) {
  for (const auto& e : table) {
    if (e.value == v) return e.name;
  }
  return "";
}

template <typename Enum, std::size_t N>
Enum enum_value(const EnumName<Enum> (&table)[N], const json& v, const char* field) {
  if (v.is_string()) {
    for (const auto& e : table) {
      if (v == e.name) return e.value;
    }
  }
  throw Error(ErrorCode::Parse, std::string("config: bad value for '") + field + "'");
}

[[noreturn]] void config_error(const std::string& message) {
  throw Error(ErrorCode::Parse, "config: " + message);
}

double config_number(const json& v, const char* field) {
  if (!v.is_number()) config_error(std::string("'") + field + "' must be a number");
  return v.get<double>();
}

WeightTerm parse_weight(const json& v, const char* field) {
  if (!v.is_object()) config_error(std::string("'") + field + "' must be an object");
  WeightTerm w;
  for (auto it = v.begin(); it != v.end(); ++it) {
    if (it.key() == "exponent") {
      w.exponent = config_number(it.value(), "exponent");
    } else if (it.key() == "scale") {
      w.scale = config_number(it.value(), "scale");
    } else {
      config_error("unknown weight field '" + it.key() + "'");
    }
  }
  return w;
}

json weight_json(const WeightTerm& w) { return json{{"exponent", w.exponent}, {"scale", w.scale}}; }

}  // namespace

ScoreConfig parse_config(std::string_view text) {
  json obj;
  try {
    obj = json::parse(text);
  } catch (const json::parse_error& e) {
    config_error(std::string("invalid JSON: ") + e.what());
  }
  if (!obj.is_object()) config_error("top level must be an object");
  ScoreConfig c;
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    const std::string& k = it.key();
    const json& v = it.value();
    if (k == "base_temperature") {
      c.base_temperature = config_number(v, "base_temperature");
    } else if (k == "delta_ts") {
      if (!v.is_array()) config_error("'delta_ts' must be an array");
      c.delta_ts.clear();
      for (const auto& x : v) c.delta_ts.push_back(config_number(x, "delta_ts"));
    } else if (k == "lambda") {
      c.lambda = config_number(v, "lambda");
    } else if (k == "normalization") {
      c.normalization = enum_value(kNormalizations, v, "normalization");
    } else if (k == "entropy_tail") {
      c.entropy_tail = enum_value(kTails, v, "entropy_tail");
    } else if (k == "base_variation_mode") {
      c.base_variation_mode = enum_value(kBaseModes, v, "base_variation_mode");
    } else if (k == "path_equality") {
      c.path_equality = enum_value(kEqualities, v, "path_equality");
    } else if (k == "se_sequence_prob") {
      c.se_sequence_prob = enum_value(kSeqProbs, v, "se_sequence_prob");
    } else if (k == "max_tokens") {
      if (!v.is_number_unsigned()) config_error("'max_tokens' must be a positive integer");
      c.max_tokens = v.get<std::size_t>();
    } else if (k == "weights") {
      if (!v.is_object()) config_error("'weights' must be an object");
      for (auto w = v.begin(); w != v.end(); ++w) {
        if (w.key() == "base") {
          c.weights.base = parse_weight(w.value(), "base");
        } else if (w.key() == "potential") {
          c.weights.potential = parse_weight(w.value(), "potential");
        } else if (w.key() == "temperature_entropy") {
          c.weights.temperature_entropy = parse_weight(w.value(), "temperature_entropy");
        } else {
          config_error("unknown weights entry '" + w.key() + "'");
        }
      }
    } else {
      config_error("unknown field '" + k + "'");
    }
  }
  try {
    validate_config(c);
  } catch (const Error& e) {
    config_error(e.what());
  }
  return c;
}

std::string config_to_json(const ScoreConfig& c) {
  json obj = {
      {"base_temperature", c.base_temperature},
      {"delta_ts", c.delta_ts},
      {"lambda", c.lambda},
      {"normalization", enum_name(kNormalizations, c.normalization)},
      {"entropy_tail", enum_name(kTails, c.entropy_tail)},
      {"base_variation_mode", enum_name(kBaseModes, c.base_variation_mode)},
      {"path_equality", enum_name(kEqualities, c.path_equality)},
      {"se_sequence_prob", enum_name(kSeqProbs, c.se_sequence_prob)},
      {"max_tokens", c.max_tokens},
      {"weights",
       {{"base", weight_json(c.weights.base)},
        {"potential", weight_json(c.weights.potential)},
        {"temperature_entropy", weight_json(c.weights.temperature_entropy)}}},
  };
  return obj.dump();
}

// ---------------------------------------------------------------------------
// Reports

namespace {

json report_json(const ScoreReport& r) {
  json o = json::object();
  o["query_id"] = r.query_id;
  if (r.label) o["label"] = *r.label;
  if (r.failure) {
    json f = {{"code", r.failure->code}, {"message", r.failure->message}};
    if (!r.failure->detail.empty()) f["detail"] = json::parse(r.failure->detail);
    o["failure"] = std::move(f);
    return o;
  }
  json per = json::array();
  for (const auto& t : r.per_delta_t) {
    per.push_back({{"delta_t", t.delta_t}, {"delta_b", t.delta_b}, {"delta_p", t.delta_p},
                   {"delta_th", t.delta_th}});
  }
  o["per_delta_t"] = std::move(per);
  o["delta_f"] = r.delta_f;
  o["delta_th_total"] = r.delta_th_total;
  o["delta_u"] = r.delta_u;
  if (r.se) o["se"] = *r.se;
  if (r.hallufield_se) o["hallufield_se"] = *r.hallufield_se;
  o["baselines"] = json(r.baselines);
  o["se_excluded"] = r.se_excluded;
  o["se_uniform_fallback"] = r.se_uniform_fallback;
  return o;
}

json metric_json(const MetricRow& m) {
  json o = {{"method", m.method}, {"auc", m.auc}, {"n", m.n}};
  o["accuracy"] = m.accuracy ? json(*m.accuracy) : json(nullptr);
  o["threshold"] = m.threshold ? json(*m.threshold) : json(nullptr);
  return o;
}

ScoreReport report_from_json(const json& o) {
  auto num = [](const json& v, const char* what) {
    if (!v.is_number()) throw Error(ErrorCode::Parse, std::string("report: '") + what + "' must be a number");
    return v.get<double>();
  };
  if (!o.is_object() || !o.contains("query_id") || !o["query_id"].is_string()) {
    throw Error(ErrorCode::Parse, "report entries need a string query_id");
  }
  ScoreReport r;
  r.query_id = o["query_id"].get<std::string>();
  if (o.contains("label") && o["label"].is_boolean()) r.label = o["label"].get<bool>();
  if (o.contains("failure")) {
    const json& f = o["failure"];
    ScoreFailure failure;
    failure.code = f.value("code", "");
    failure.message = f.value("message", "");
    if (f.contains("detail")) failure.detail = f["detail"].dump();
    r.failure = failure;
    return r;
  }
  for (const char* key : {"per_delta_t", "delta_f", "delta_th_total", "delta_u"}) {
    if (!o.contains(key)) throw Error(ErrorCode::Parse, std::string("report: missing '") + key + "'");
  }
  for (const auto& t : o["per_delta_t"]) {
    r.per_delta_t.push_back({num(t.at("delta_t"), "delta_t"), num(t.at("delta_b"), "delta_b"),
                             num(t.at("delta_p"), "delta_p"), num(t.at("delta_th"), "delta_th")});
  }
  r.delta_f = num(o["delta_f"], "delta_f");
  r.delta_th_total = num(o["delta_th_total"], "delta_th_total");
  r.delta_u = num(o["delta_u"], "delta_u");
  if (o.contains("se")) r.se = num(o["se"], "se");
  if (o.contains("hallufield_se")) r.hallufield_se = num(o["hallufield_se"], "hallufield_se");
  if (o.contains("baselines")) {
    for (auto it = o["baselines"].begin(); it != o["baselines"].end(); ++it) {
      r.baselines[it.key()] = num(it.value(), "baselines");
    }
  }
  if (o.contains("se_excluded")) r.se_excluded = o["se_excluded"].get<std::size_t>();
  if (o.contains("se_uniform_fallback")) r.se_uniform_fallback = o["se_uniform_fallback"].get<bool>();
  return r;
}

std::vector<ScoreReport> reports_from_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::vector<std::string> header;
  while (header.empty() && std::getline(in, line)) {
    if (!blank(line)) header = split_csv_line(line);
  }
  std::unordered_map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* key : {"query_id", "label", "status", "delta_f", "delta_th_total", "delta_u"}) {
    if (!col.count(key)) throw Error(ErrorCode::Parse, std::string("report CSV: missing column '") + key + "'");
  }
  // delta_t grid from the delta_b@<dt> columns, in header order
  std::vector<std::pair<double, std::string>> grid;
  for (const auto& h : header) {
    if (h.rfind("delta_b@", 0) == 0) grid.emplace_back(parse_double(h.substr(8), "delta_t"), h.substr(8));
  }

  std::vector<ScoreReport> reports;
  while (std::getline(in, line)) {
    if (blank(line)) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) throw Error(ErrorCode::Parse, "report CSV: ragged row");
    auto cell = [&](const std::string& name) -> const std::string& { return f[col.at(name)]; };
    auto opt = [&](const std::string& name) -> std::optional<double> {
      if (!col.count(name) || cell(name).empty()) return std::nullopt;
      return parse_double(cell(name), name.c_str());
    };
    ScoreReport r;
    r.query_id = cell("query_id");
    if (!cell("label").empty()) r.label = parse_bool(cell("label"));
    if (cell("status") != "ok") {
      r.failure = ScoreFailure{cell("status"), "scoring failed", ""};
      reports.push_back(std::move(r));
      continue;
    }
    r.delta_f = *opt("delta_f");
    r.delta_th_total = *opt("delta_th_total");
    r.delta_u = *opt("delta_u");
    r.se = opt("se");
    r.hallufield_se = opt("hallufield_se");
    if (auto v = opt("re")) r.baselines["re"] = *v;
    if (auto v = opt("ce")) r.baselines["ce"] = *v;
    if (auto v = opt("se_excluded")) r.se_excluded = static_cast<std::size_t>(*v);
    for (const auto& [dt, tag] : grid) {
      VariationTriple t;
      t.delta_t = dt;
      t.delta_b = opt("delta_b@" + tag).value_or(0.0);
      t.delta_p = opt("delta_p@" + tag).value_or(0.0);
      t.delta_th = opt("delta_th@" + tag).value_or(0.0);
      r.per_delta_t.push_back(t);
    }
    reports.push_back(std::move(r));
  }
  return reports;
}

}  // namespace

std::string reports_to_json(std::span<const ScoreReport> reports, std::span<const MetricRow> metrics) {
  json o = json::object();
  json arr = json::array();
  for (const auto& r : reports) arr.push_back(report_json(r));
  o["reports"] = std::move(arr);
  if (!metrics.empty()) {
    json m = json::array();
    for (const auto& row : metrics) m.push_back(metric_json(row));
    o["metrics"] = std::move(m);
  }
  return o.dump() + "\n";
}

std::string reports_to_csv(std::span<const ScoreReport> reports) {
  std::vector<double> grid;
  for (const auto& r : reports) {
    if (r.ok()) {
      for (const auto& t : r.per_delta_t) grid.push_back(t.delta_t);
      break;
    }
  }
  std::ostringstream out;
  out << "query_id,label,status,delta_f,delta_th_total,delta_u,se,hallufield_se,re,ce,se_excluded";
  for (double dt : grid) {
    const std::string tag = detail::format_double(dt);
    out << ",delta_b@" << tag << ",delta_p@" << tag << ",delta_th@" << tag;
  }
  out << '\n';
  for (const auto& r : reports) {
    out << csv_field(r.query_id) << ',' << (r.label ? (*r.label ? "true" : "false") : "") << ',';
    if (!r.ok()) {
      out << csv_field(r.failure->code) << std::string(8 + 3 * grid.size(), ',') << '\n';
      continue;
    }
    auto baseline = [&](const char* name) {
      auto it = r.baselines.find(name);
      return it == r.baselines.end() ? std::string() : detail::format_double(it->second);
    };
    out << "ok," << detail::format_double(r.delta_f) << ',' << detail::format_double(r.delta_th_total)
        << ',' << detail::format_double(r.delta_u) << ',' << opt_num(r.se) << ','
        << opt_num(r.hallufield_se) << ',' << baseline("re") << ',' << baseline("ce") << ','
        << r.se_excluded;
    for (std::size_t k = 0; k < grid.size(); ++k) {
      if (k < r.per_delta_t.size()) {
        const auto& t = r.per_delta_t[k];
        out << ',' << detail::format_double(t.delta_b) << ',' << detail::format_double(t.delta_p)
            << ',' << detail::format_double(t.delta_th);
      } else {
        out << ",,,";
      }
    }
    out << '\n';
  }
  return out.str();
}

std::vector<ScoreReport> parse_reports(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) throw Error(ErrorCode::Parse, "empty score file");
  if (text[first] != '{') return reports_from_csv(text);
  json o;
  try {
    o = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::Parse, std::string("score file: invalid JSON: ") + e.what());
  }
  if (!o.is_object() || !o.contains("reports") || !o["reports"].is_array()) {
    throw Error(ErrorCode::Parse, "score file: expected an object with a 'reports' array");
  }
  std::vector<ScoreReport> reports;
  try {
    for (const auto& r : o["reports"]) reports.push_back(report_from_json(r));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("score file: ") + e.what());
  }
  return reports;
}

std::string metrics_to_json(std::span<const MetricRow> metrics) {
  json arr = json::array();
  for (const auto& m : metrics) arr.push_back(metric_json(m));
  return json{{"metrics", arr}}.dump() + "\n";
}

std::string metrics_to_csv(std::span<const MetricRow> metrics) {
  std::ostringstream out;
  out << "method,auc,accuracy,threshold,n\n";
  for (const auto& m : metrics) {
    out << csv_field(m.method) << ',' << detail::format_double(m.auc) << ',' << opt_num(m.accuracy)
        << ',' << opt_num(m.threshold) << ',' << m.n << '\n';
  }
  return out.str();
}

std::string diagnostics_to_csv(std::span<const DiagnosticsRow> rows) {
  std::ostringstream out;
  out << "delta_t,n_hallucinated,n_non_hallucinated";
  for (const char* sig : {"delta_b", "delta_p", "delta_th"}) {
    out << ',' << sig << "_mean_hallucinated," << sig << "_mean_non_hallucinated," << sig
        << "_difference," << sig << "_auc";
  }
  out << '\n';
  for (const auto& r : rows) {
    out << detail::format_double(r.delta_t) << ',' << r.n_hallucinated << ',' << r.n_non_hallucinated;
    for (const SignatureStats* s : {&r.base, &r.potential, &r.temperature_entropy}) {
      out << ',' << detail::format_double(s->mean_hallucinated) << ','
          << detail::format_double(s->mean_non_hallucinated) << ','
          << detail::format_double(s->difference) << ',' << detail::format_double(s->auc);
    }
    out << '\n';
  }
  return out.str();
}

std::string issues_to_json(std::span<const ParseIssue> issues) {
  json arr = json::array();
  for (const auto& i : issues) {
    arr.push_back({{"code", i.code}, {"query_id", i.query_id}, {"line", i.line}, {"message", i.message}});
  }
  return arr.dump();
}

std::string digest(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string dataset_digest(std::span<const QueryBundle> bundles) {
  std::ostringstream out;
  write_traces(out, bundles);
  return digest(out.str());
}

}  // namespace hallufield
