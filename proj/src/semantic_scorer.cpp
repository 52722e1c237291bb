#include "mtrz/semantic_scorer.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include <httplib.h>
#include <json.hpp>

#include "mtrz/lexical_metrics.hpp"

namespace mtrz {

SynonymLexicon::SynonymLexicon(std::string source_language, std::string target_language)
    : source_language_(std::move(source_language)), target_language_(std::move(target_language)) {}

void SynonymLexicon::add(Side& side, std::map<std::string, std::vector<std::string>>& surfaces,
                         const std::string& concept_id, const std::string& token) {
  if (token.empty() || tokenize(token).size() != 1) {
    throw std::invalid_argument("lexicon: surface token must be a single token: '" + token + "'");
  }
  const auto [it, inserted] = side.token_to_concept.try_emplace(token, concept_id);
  if (!inserted) {
    if (it->second != concept_id) {
      throw std::invalid_argument("lexicon: token '" + token + "' already maps to concept " + it->second);
    }
    return;
  }
  surfaces[concept_id].push_back(token);
}

void SynonymLexicon::add_source(const std::string& concept_id, const std::string& token) {
  add(source_, source_surfaces_, concept_id, token);
}

void SynonymLexicon::add_target(const std::string& concept_id, const std::string& token) {
  add(target_, target_surfaces_, concept_id, token);
}

std::optional<std::string> SynonymLexicon::source_concept(std::string_view token) const {
  const auto it = source_.token_to_concept.find(std::string(token));
  if (it == source_.token_to_concept.end()) {
    return std::nullopt;
  }
  return it->second;
}

std::optional<std::string> SynonymLexicon::target_concept(std::string_view token) const {
  const auto it = target_.token_to_concept.find(std::string(token));
  if (it == target_.token_to_concept.end()) {
    return std::nullopt;
  }
  return it->second;
}

namespace {

using Bigram = std::pair<std::string, std::string>;

}  // namespace

double mock_synonym_score(const SynonymLexicon& lexicon, const ScoreRequest& request) {
  std::vector<std::string> src_concepts;
  for (const auto& token : tokenize(request.src)) {
    if (auto c = lexicon.source_concept(token)) {
      src_concepts.push_back(std::move(*c));
    }
  }
  if (src_concepts.empty()) {
    throw std::invalid_argument("mock scorer: source has no known concepts");
  }

  // Unknown trans tokens stay in the sequence as nullopt: they enlarge the
  // denominator and break bigrams but never match.
  std::vector<std::optional<std::string>> trans_concepts;
  for (const auto& token : tokenize(request.trans)) {
    trans_concepts.push_back(lexicon.target_concept(token));
  }
  if (trans_concepts.empty()) {
    return 0.0;
  }

  std::map<std::string, std::int64_t> src_counts;
  std::map<std::string, std::int64_t> trans_counts;
  for (const auto& c : src_concepts) {
    ++src_counts[c];
  }
  for (const auto& c : trans_concepts) {
    if (c) {
      ++trans_counts[*c];
    }
  }
  std::int64_t matched = 0;
  for (const auto& [c, n] : src_counts) {
    const auto it = trans_counts.find(c);
    if (it != trans_counts.end()) {
      matched += std::min(n, it->second);
    }
  }
  if (matched == 0) {
    return 0.0;
  }
  const double precision = static_cast<double>(matched) / static_cast<double>(trans_concepts.size());
  const double recall = static_cast<double>(matched) / static_cast<double>(src_concepts.size());
  const double f1 = 2.0 * precision * recall / (precision + recall);

  double order = 1.0;
  if (src_concepts.size() >= 2) {
    std::map<Bigram, std::int64_t> src_bigrams;
    std::map<Bigram, std::int64_t> trans_bigrams;
    for (std::size_t i = 0; i + 1 < src_concepts.size(); ++i) {
      ++src_bigrams[{src_concepts[i], src_concepts[i + 1]}];
    }
    for (std::size_t i = 0; i + 1 < trans_concepts.size(); ++i) {
      if (trans_concepts[i] && trans_concepts[i + 1]) {
        ++trans_bigrams[{*trans_concepts[i], *trans_concepts[i + 1]}];
      }
    }
    std::int64_t preserved = 0;
    for (const auto& [bigram, n] : src_bigrams) {
      const auto it = trans_bigrams.find(bigram);
      if (it != trans_bigrams.end()) {
        preserved += std::min(n, it->second);
      }
    }
    order = std::max(0.5, static_cast<double>(preserved) / static_cast<double>(src_concepts.size() - 1));
  }
  return std::clamp(f1 * order, 0.0, 1.0);
}

std::string_view to_string(ScorerError::Kind kind) {
  switch (kind) {
    case ScorerError::Kind::Transport:
      return "transport";
    case ScorerError::Kind::Timeout:
      return "timeout";
    case ScorerError::Kind::Status:
      return "status";
    case ScorerError::Kind::Protocol:
      return "protocol";
  }
  return "unknown";
}

double remote_score(const std::string& endpoint, const ScoreRequest& request, std::chrono::milliseconds timeout) {
  if (request.src.empty()) {
    throw std::invalid_argument("score request: empty src");
  }
  httplib::Client client(endpoint);
  if (!client.is_valid()) {
    throw ScorerError(ScorerError::Kind::Transport, "invalid scorer endpoint: " + endpoint);
  }
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);

  nlohmann::json body = {{"src", request.src}, {"trans", request.trans}, {"ref", nullptr}};
  if (request.ref) {
    body["ref"] = *request.ref;
  }

  const auto started = std::chrono::steady_clock::now();
  const auto result = client.Post("/score", body.dump(), "application/json");
  if (!result) {
    const auto err = result.error();
    const auto elapsed = std::chrono::steady_clock::now() - started;
    const bool timed_out = err == httplib::Error::ConnectionTimeout ||
                           ((err == httplib::Error::Read || err == httplib::Error::Write) && elapsed >= timeout);
    throw ScorerError(timed_out ? ScorerError::Kind::Timeout : ScorerError::Kind::Transport,
                      "scorer request to " + endpoint + " failed: " + httplib::to_string(err));
  }
  if (result->status < 200 || result->status >= 300) {
    throw ScorerError(ScorerError::Kind::Status, "scorer returned HTTP " + std::to_string(result->status));
  }

  const auto parsed = nlohmann::json::parse(result->body, nullptr, /*allow_exceptions=*/false);
  if (parsed.is_discarded() || !parsed.is_object() || !parsed.contains("score") || !parsed["score"].is_number()) {
    throw ScorerError(ScorerError::Kind::Protocol, "malformed scorer response: " + result->body.substr(0, 200));
  }
  const double value = parsed["score"].get<double>();
  if (!std::isfinite(value) || value < 0.0 || value > 1.0) {
    throw ScorerError(ScorerError::Kind::Protocol, "scorer response outside [0, 1]: " + result->body.substr(0, 200));
  }
  return value;
}

RemoteScorer::RemoteScorer(RemoteScorerConfig config) : config_(std::move(config)) {
  if (config_.max_in_flight == 0) {
    throw std::invalid_argument("scorer_max_in_flight: must be positive");
  }
}

double RemoteScorer::score(const ScoreRequest& request) {
  {
    std::unique_lock lock(mutex_);
    slot_free_.wait(lock, [&] { return in_flight_ < config_.max_in_flight; });
    ++in_flight_;
    peak_in_flight_ = std::max(peak_in_flight_, in_flight_);
  }
  const auto release = [&] {
    {
      std::lock_guard lock(mutex_);
      --in_flight_;
    }
    slot_free_.notify_one();
  };
  try {
    const double value = remote_score(config_.endpoint, request, config_.timeout);
    release();
    return value;
  } catch (...) {
    release();
    throw;
  }
}

std::size_t RemoteScorer::peak_in_flight() const {
  std::lock_guard lock(mutex_);
  return peak_in_flight_;
}

}  // namespace mtrz
