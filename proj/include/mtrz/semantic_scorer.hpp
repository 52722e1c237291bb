#pragma once

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mtrz {

struct ScoreRequest {
  std::string src;
  std::string trans;
  std::optional<std::string> ref;
};

// Reference-free adequacy scorer. Implementations return a value in [0, 1] and
// are deterministic for a fixed configuration.
class SemanticScorer {
 public:
  virtual ~SemanticScorer() = default;
  virtual double score(const ScoreRequest& request) = 0;
};

// Surface-token to concept mapping for a source and a target language.
class SynonymLexicon {
 public:
  SynonymLexicon(std::string source_language, std::string target_language);

  // Throws std::invalid_argument when the token already denotes another concept
  // in the same language.
  void add_source(const std::string& concept_id, const std::string& token);
  void add_target(const std::string& concept_id, const std::string& token);

  std::optional<std::string> source_concept(std::string_view token) const;
  std::optional<std::string> target_concept(std::string_view token) const;

  const std::string& source_language() const { return source_language_; }
  const std::string& target_language() const { return target_language_; }
  const std::map<std::string, std::vector<std::string>>& target_surfaces() const { return target_surfaces_; }
  const std::map<std::string, std::vector<std::string>>& source_surfaces() const { return source_surfaces_; }

 private:
  struct Side {
    std::unordered_map<std::string, std::string> token_to_concept;
  };
  static void add(Side& side, std::map<std::string, std::vector<std::string>>& surfaces, const std::string& concept_id,
                  const std::string& token);

  std::string source_language_;
  std::string target_language_;
  Side source_;
  Side target_;
  std::map<std::string, std::vector<std::string>> source_surfaces_;
  std::map<std::string, std::vector<std::string>> target_surfaces_;
};

// Concept F1 between src and trans, times an order factor: the clipped fraction of
// src concept bigrams that also occur in trans, floored at 0.5. Trans tokens
// outside the target lexicon count as unmatched. Throws std::invalid_argument when
// src has no known concepts.
double mock_synonym_score(const SynonymLexicon& lexicon, const ScoreRequest& request);

class MockSynonymScorer final : public SemanticScorer {
 public:
  explicit MockSynonymScorer(SynonymLexicon lexicon) : lexicon_(std::move(lexicon)) {}
  double score(const ScoreRequest& request) override { return mock_synonym_score(lexicon_, request); }
  const SynonymLexicon& lexicon() const { return lexicon_; }

 private:
  SynonymLexicon lexicon_;
};

// All remote failures are retriable; kind() tells them apart.
class ScorerError : public std::runtime_error {
 public:
  enum class Kind { Transport, Timeout, Status, Protocol };

  ScorerError(Kind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
  Kind kind() const { return kind_; }
  bool retriable() const { return true; }

 private:
  Kind kind_;
};

std::string_view to_string(ScorerError::Kind kind);

struct RemoteScorerConfig {
  std::string endpoint;  // e.g. http://127.0.0.1:8080; requests go to <endpoint>/score
  std::chrono::milliseconds timeout{5000};
  std::size_t max_in_flight = 4;
};

// JSON-over-HTTP client: POST {"src","trans","ref"} to /score, expects {"score": x}.
class RemoteScorer final : public SemanticScorer {
 public:
  explicit RemoteScorer(RemoteScorerConfig config);
  double score(const ScoreRequest& request) override;

  std::size_t peak_in_flight() const;

 private:
  RemoteScorerConfig config_;
  mutable std::mutex mutex_;
  std::condition_variable slot_free_;
  std::size_t in_flight_ = 0;
  std::size_t peak_in_flight_ = 0;
};

double remote_score(const std::string& endpoint, const ScoreRequest& request, std::chrono::milliseconds timeout);

}  // namespace mtrz
