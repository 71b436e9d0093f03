#include "hallufield/trace_model.hpp"

#include <cmath>
#include <sstream>

#include "hallufield/error.hpp"

namespace hallufield {

std::string_view error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::Domain: return "DomainError";
    case ErrorCode::MissingPerturbation: return "MissingPerturbation";
    case ErrorCode::ModeUnavailable: return "ModeUnavailable";
    case ErrorCode::EnumerationTooLarge: return "EnumerationTooLarge";
    case ErrorCode::Parse: return "ParseError";
    case ErrorCode::Io: return "IoError";
  }
  return "Unknown";
}

std::string_view role_name(Role role) noexcept {
  return role == Role::Base ? "base" : "perturbation";
}

const std::vector<GenerationRecord>* QueryBundle::find_perturbations(double delta_t) const {
  auto it = perturbations.lower_bound(delta_t - kTemperatureTolerance);
  if (it != perturbations.end() && std::abs(it->first - delta_t) <= kTemperatureTolerance) {
    return &it->second;
  }
  return nullptr;
}

void validate_config(const ScoreConfig& config) {
  if (config.delta_ts.empty()) throw_domain("delta_ts must not be empty");
  double prev = 0.0;
  for (std::size_t i = 0; i < config.delta_ts.size(); ++i) {
    const double dt = config.delta_ts[i];
    if (!std::isfinite(dt) || dt <= 0.0) throw_domain("delta_ts must be strictly positive");
    if (i > 0 && dt <= prev) throw_domain("delta_ts must be strictly increasing");
    prev = dt;
  }
  if (!(config.lambda > 0.0) || !std::isfinite(config.lambda)) {
    throw_domain("lambda must be > 0");
  }
  if (!std::isfinite(config.base_temperature) || config.base_temperature < 0.0) {
    throw_domain("base_temperature must be >= 0");
  }
  if (config.max_tokens == 0) throw_domain("max_tokens must be >= 1");
}

namespace {

class ViolationSink {
 public:
  explicit ViolationSink(std::vector<Violation>& out) : out_(out) {}

  template <typename... Args>
  void add(const char* code, const Args&... parts) {
    std::ostringstream msg;
    (msg << ... << parts);
    out_.push_back({code, msg.str()});
  }

 private:
  std::vector<Violation>& out_;
};

std::string where(const GenerationRecord& r) {
  std::ostringstream os;
  os << "query '" << r.query_id << "' " << role_name(r.role) << " record (delta_t=" << r.delta_t
     << ", sample " << r.sample_index << ")";
  return os.str();
}

void check_step(const GenerationRecord& r, std::size_t index, const TokenStep& s, ViolationSink& sink) {
  const std::string at = where(r) + " step " + std::to_string(index);
  if (!std::isfinite(s.logp)) {
    sink.add("NONFINITE", at, ": logp is not finite");
  } else if (s.logp > kLogpTolerance) {
    sink.add("LOGP_POSITIVE", at, ": logp ", s.logp, " > 0");
  }
  if (s.rank < 1) sink.add("INVALID_RANK", at, ": rank ", s.rank, " < 1");
  if (s.token_id < 0) sink.add("INVALID_TOKEN", at, ": negative token id");

  double mass = 0.0;
  for (std::size_t k = 0; k < s.topk.size(); ++k) {
    const double lp = s.topk[k].value;
    if (!std::isfinite(lp) && lp != -INFINITY) {
      sink.add("NONFINITE", at, ": topk entry ", k, " is not a log-probability");
      continue;
    }
    if (lp > kLogpTolerance) sink.add("LOGP_POSITIVE", at, ": topk entry ", k, " > 0");
    if (k > 0 && lp > s.topk[k - 1].value) {
      sink.add("TOPK_ORDER", at, ": topk log-probabilities increase at position ", k);
    }
    mass += std::exp(lp);
  }
  if (mass > 1.0 + 1e-9) sink.add("TOPK_MASS", at, ": topk probability mass ", mass, " > 1");

  const auto k = static_cast<std::int64_t>(s.topk.size());
  if (s.rank >= 1 && s.rank <= k && s.topk[s.rank - 1].token != s.token_id) {
    sink.add("RANK_MISMATCH", at, ": token ", s.token_id, " not at topk position ", s.rank - 1);
  }
  for (const auto& c : s.topk) {
    if (c.token == s.token_id) {
      if (std::abs(c.value - s.logp) > kLogpTolerance) {
        sink.add("LOGP_MISMATCH", at, ": logp ", s.logp, " disagrees with topk entry ", c.value);
      }
      break;
    }
  }
  if (s.raw_logits_topk) {
    for (const auto& c : *s.raw_logits_topk) {
      if (!std::isfinite(c.value)) {
        sink.add("NONFINITE", at, ": raw logit for token ", c.token, " is not finite");
        break;
      }
    }
  }
}

void check_record(const GenerationRecord& r, std::size_t max_tokens, ViolationSink& sink) {
  if (!std::isfinite(r.temperature) || r.temperature < 0.0) {
    sink.add("NEGATIVE_TEMPERATURE", where(r), ": temperature ", r.temperature, " is not >= 0");
  }
  if (r.steps.empty()) sink.add("EMPTY_STEPS", where(r), ": no token steps");
  if (r.steps.size() > max_tokens) {
    sink.add("TOO_MANY_STEPS", where(r), ": ", r.steps.size(), " steps exceed cap ", max_tokens);
  }
  if (r.cluster && *r.cluster < 0) sink.add("INVALID_CLUSTER", where(r), ": negative cluster id");
  if (r.sample_index < 0) sink.add("INVALID_SAMPLE_INDEX", where(r), ": negative sample_index");
  for (std::size_t i = 0; i < r.steps.size(); ++i) check_step(r, i, r.steps[i], sink);
}

}  // namespace

std::vector<Violation> validate_record(const GenerationRecord& record, std::size_t max_tokens) {
  std::vector<Violation> out;
  ViolationSink sink(out);
  check_record(record, max_tokens, sink);
  return out;
}

std::vector<Violation> validate_bundle(const QueryBundle& bundle, std::size_t max_tokens) {
  std::vector<Violation> out;
  ViolationSink sink(out);

  const auto& base = bundle.base;
  if (base.role != Role::Base) sink.add("BASE_ROLE", where(base), ": base slot holds a perturbation");
  if (base.delta_t != 0.0 || base.sample_index != 0) {
    sink.add("BASE_ROLE", where(base), ": base record must have delta_t = 0 and sample_index = 0");
  }
  if (base.query_id != bundle.query_id) {
    sink.add("QUERY_ID_MISMATCH", where(base), ": bundle query '", bundle.query_id, "'");
  }
  check_record(base, max_tokens, sink);

  double prev_key = 0.0;
  bool first = true;
  for (const auto& [delta_t, records] : bundle.perturbations) {
    if (!(delta_t > 0.0)) sink.add("NONPOSITIVE_DELTA_T", "delta_t key ", delta_t, " is not > 0");
    if (!first && delta_t - prev_key <= kTemperatureTolerance) {
      sink.add("DUPLICATE_DELTA_T", "delta_t keys ", prev_key, " and ", delta_t, " are not distinct");
    }
    first = false;
    prev_key = delta_t;

    if (records.empty()) {
      sink.add("EMPTY_SAMPLE_SET", "query '", bundle.query_id, "' has no samples under delta_t ", delta_t);
    }
    for (const auto& r : records) {
      if (r.role != Role::Perturbation) {
        sink.add("PERTURBATION_ROLE", where(r), ": base record stored under delta_t ", delta_t);
      }
      if (r.query_id != bundle.query_id) {
        sink.add("QUERY_ID_MISMATCH", where(r), ": bundle query '", bundle.query_id, "'");
      }
      if (std::abs(r.delta_t - delta_t) > kTemperatureTolerance) {
        sink.add("DELTA_T_MISMATCH", where(r), ": stored under key ", delta_t);
      }
      if (std::abs(r.temperature - (base.temperature + delta_t)) > kTemperatureTolerance) {
        sink.add("TEMP_MISMATCH", where(r), ": temperature ", r.temperature, " != ", base.temperature,
                 " + ", delta_t);
      }
      check_record(r, max_tokens, sink);
    }
  }
  return out;
}

}  // namespace hallufield
