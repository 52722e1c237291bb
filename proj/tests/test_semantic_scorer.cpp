#include <doctest.h>

#include <atomic>
#include <random>
#include <set>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "mtrz/lexical_metrics.hpp"
#include "mtrz/semantic_scorer.hpp"

using namespace mtrz;

namespace {

// Concepts c0..c5; source "sN", targets "tNa" / "tNb".
SynonymLexicon small_lexicon() {
  SynonymLexicon lex("Src", "Tgt");
  for (int c = 0; c < 6; ++c) {
    const auto id = "c" + std::to_string(c);
    lex.add_source(id, "s" + std::to_string(c));
    lex.add_target(id, "t" + std::to_string(c) + "a");
    lex.add_target(id, "t" + std::to_string(c) + "b");
  }
  return lex;
}

// Bag-of-concepts F1 computed directly from sets of positions.
double concept_f1(const std::vector<int>& src, const std::vector<int>& trans) {
  std::multiset<int> a(src.begin(), src.end());
  std::size_t matched = 0;
  for (const int t : trans) {
    const auto it = a.find(t);
    if (it != a.end()) {
      ++matched;
      a.erase(it);
    }
  }
  if (matched == 0) {
    return 0.0;
  }
  const double p = static_cast<double>(matched) / static_cast<double>(trans.size());
  const double r = static_cast<double>(matched) / static_cast<double>(src.size());
  return 2 * p * r / (p + r);
}

}  // namespace

TEST_CASE("mock scorer examples") {
  const auto lex = small_lexicon();
  CHECK(mock_synonym_score(lex, {"s0 s1 s2", "t0a t1a t2a", std::nullopt}) == 1.0);
  CHECK(mock_synonym_score(lex, {"s0 s1 s2", "t3a t4a t5b", std::nullopt}) == 0.0);
  CHECK(mock_synonym_score(lex, {"s0 s1 s2", "", std::nullopt}) == 0.0);
  CHECK_THROWS_AS(mock_synonym_score(lex, {"zz yy", "t0a", std::nullopt}), std::invalid_argument);
}

TEST_CASE("synonym translations score 1.0 while BLEU stays below 100") {
  // Five sentences; each translation uses the second synonym for every concept.
  const auto lex = small_lexicon();
  const std::vector<std::vector<int>> sentences{{0, 1, 2, 3}, {5, 4, 3, 2, 1}, {2, 2, 0, 1}, {3, 4, 5, 0}, {1, 0}};
  for (const auto& s : sentences) {
    std::string src;
    std::string ref;
    std::string trans;
    for (const int c : s) {
      src += "s" + std::to_string(c) + " ";
      ref += "t" + std::to_string(c) + "a ";
      trans += "t" + std::to_string(c) + "b ";
    }
    CHECK(concept_f1(s, s) == 1.0);
    CHECK(mock_synonym_score(lex, {src, trans, ref}) == 1.0);
    CHECK(sentence_bleu(tokenize(trans), tokenize(ref)) < 100.0);
  }
}

TEST_CASE("mock scorer: F1 times floored order factor") {
  const auto lex = small_lexicon();
  // Reversed order: full F1, no preserved bigrams, factor floors at 0.5.
  CHECK(mock_synonym_score(lex, {"s0 s1 s2 s3", "t3a t2a t1a t0a", std::nullopt}) == doctest::Approx(0.5));
  // Two of three concepts, one preserved bigram out of two.
  const double f1 = concept_f1({0, 1, 2}, {0, 1});
  CHECK(mock_synonym_score(lex, {"s0 s1 s2", "t0a t1b", std::nullopt}) == doctest::Approx(f1 * 0.5));
  // An unknown token breaks the bigram and counts against precision.
  CHECK(mock_synonym_score(lex, {"s0 s1", "t0a zz t1a", std::nullopt}) ==
        doctest::Approx((2 * (2.0 / 3.0) * 1.0 / (2.0 / 3.0 + 1.0)) * 0.5));
}

TEST_CASE("mock scorer is invariant under synonym substitution, bounded and deterministic") {
  const auto lex = small_lexicon();
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> concept_dist(0, 5);
  std::uniform_int_distribution<int> len(1, 8);
  std::bernoulli_distribution coin(0.5);
  for (int k = 0; k < 500; ++k) {
    std::string src;
    for (int i = len(rng); i > 0; --i) {
      src += "s" + std::to_string(concept_dist(rng)) + " ";
    }
    std::vector<int> trans_concepts;
    for (int i = len(rng); i > 0; --i) {
      trans_concepts.push_back(concept_dist(rng));
    }
    std::string a;
    std::string b;
    for (const int c : trans_concepts) {
      a += "t" + std::to_string(c) + "a ";
      b += "t" + std::to_string(c) + (coin(rng) ? "a " : "b ");
    }
    const double sa = mock_synonym_score(lex, {src, a, std::nullopt});
    const double sb = mock_synonym_score(lex, {src, b, std::nullopt});
    CHECK(sa == sb);
    CHECK(sa >= 0.0);
    CHECK(sa <= 1.0);
    CHECK(mock_synonym_score(lex, {src, a, std::nullopt}) == sa);
  }
}

TEST_CASE("lexicon rejects overlapping surface sets") {
  SynonymLexicon lex("A", "B");
  lex.add_target("c0", "x");
  lex.add_target("c0", "x");
  CHECK_THROWS_AS(lex.add_target("c1", "x"), std::invalid_argument);
  CHECK_THROWS_AS(lex.add_source("c1", "two words"), std::invalid_argument);
  lex.add_source("c1", "x");
  CHECK(lex.source_concept("x") == "c1");
  CHECK(lex.target_concept("x") == "c0");
}

namespace {

class ScoreServer {
 public:
  explicit ScoreServer(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
    server_.Post("/score", std::move(handler));
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~ScoreServer() {
    server_.stop();
    thread_.join();
  }
  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

ScorerError::Kind error_kind(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ScorerError& e) {
    CHECK(e.retriable());
    return e.kind();
  }
  FAIL("expected ScorerError");
  return ScorerError::Kind::Transport;
}

}  // namespace

TEST_CASE("remote scorer wire protocol") {
  nlohmann::json seen;
  ScoreServer server([&seen](const httplib::Request& req, httplib::Response& res) {
    seen = nlohmann::json::parse(req.body);
    res.set_content(R"({"score": 0.5})", "application/json");
  });
  const ScoreRequest with_ref{"src text", "trans text", std::string("ref text")};
  CHECK(remote_score(server.endpoint(), with_ref, std::chrono::milliseconds(2000)) == 0.5);
  CHECK(seen["src"] == "src text");
  CHECK(seen["trans"] == "trans text");
  CHECK(seen["ref"] == "ref text");

  CHECK(remote_score(server.endpoint(), {"源", "译", std::nullopt}, std::chrono::milliseconds(2000)) == 0.5);
  CHECK(seen["ref"].is_null());
  CHECK(seen["src"] == "源");
}

TEST_CASE("remote scorer error kinds") {
  const auto timeout = std::chrono::milliseconds(2000);
  const ScoreRequest req{"a", "b", std::nullopt};
  {
    ScoreServer server([](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"score": 1.7})", "application/json");
    });
    CHECK(error_kind([&] { remote_score(server.endpoint(), req, timeout); }) == ScorerError::Kind::Protocol);
  }
  {
    ScoreServer server([](const httplib::Request&, httplib::Response& res) {
      res.set_content("not json", "text/plain");
    });
    CHECK(error_kind([&] { remote_score(server.endpoint(), req, timeout); }) == ScorerError::Kind::Protocol);
  }
  {
    ScoreServer server([](const httplib::Request&, httplib::Response& res) {
      res.status = 503;
      res.set_content("busy", "text/plain");
    });
    CHECK(error_kind([&] { remote_score(server.endpoint(), req, timeout); }) == ScorerError::Kind::Status);
  }
  {
    ScoreServer server([](const httplib::Request&, httplib::Response& res) {
      std::this_thread::sleep_for(std::chrono::milliseconds(600));
      res.set_content(R"({"score": 0.2})", "application/json");
    });
    CHECK(error_kind([&] { remote_score(server.endpoint(), req, std::chrono::milliseconds(150)); }) ==
          ScorerError::Kind::Timeout);
  }
  // Nothing listens on the discard port of the loopback interface.
  CHECK(error_kind([&] { remote_score("http://127.0.0.1:9", req, std::chrono::milliseconds(300)); }) ==
        ScorerError::Kind::Transport);
}

TEST_CASE("remote scorer bounds in-flight requests") {
  std::atomic<int> active{0};
  std::atomic<int> peak{0};
  ScoreServer server([&](const httplib::Request&, httplib::Response& res) {
    const int now = ++active;
    int prev = peak.load();
    while (now > prev && !peak.compare_exchange_weak(prev, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(30));
    --active;
    res.set_content(R"({"score": 0.25})", "application/json");
  });
  RemoteScorer scorer({server.endpoint(), std::chrono::milliseconds(5000), 2});
  std::vector<std::thread> threads;
  std::atomic<int> ok{0};
  for (int i = 0; i < 8; ++i) {
    threads.emplace_back([&] {
      if (scorer.score({"a", "b", std::nullopt}) == 0.25) {
        ++ok;
      }
    });
  }
  for (auto& t : threads) {
    t.join();
  }
  CHECK(ok == 8);
  CHECK(scorer.peak_in_flight() <= 2);
  CHECK(peak.load() <= 2);
  CHECK_THROWS_AS(RemoteScorer({server.endpoint(), std::chrono::milliseconds(100), 0}), std::invalid_argument);
}
