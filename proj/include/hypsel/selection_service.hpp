#pragma once

#include <condition_variable>
#include <deque>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "hypsel/feedback.hpp"
#include "hypsel/trainer.hpp"

namespace hypsel {

/// One candidate pair queued for human selection.
struct ServicePair {
  std::string utterance_id;
  WordSequence candidate1;
  WordSequence candidate2;
  /// Known only on debug corpora; never sent on public endpoints.
  std::optional<std::pair<WerBreakdown, WerBreakdown>> candidate_wers;
};

/// What an annotator sees. Which side holds Candidate 1 stays server-side.
struct PairTicket {
  std::string ticket_id;
  std::string utterance_id;
  std::string transcript1;  // left
  std::string transcript2;  // right
  int stage = 0;
  double issued_at = 0.0;
};

enum class Choice { left, right };
Choice choice_from_string(const std::string& s);

struct SessionStatus {
  bool active = false;
  int stage = -1;
  int total = 0;
  int answered = 0;
  int pending = 0;
  int unserved = 0;
  int tickets_issued = 0;
  int duplicates = 0;
  int expired = 0;
  std::map<std::string, int> answered_by;
  /// Mean per-pair WER of the chosen transcripts; debug sessions only.
  std::optional<double> selected_wer_so_far;
};

struct SessionOptions {
  double lease_seconds = 300.0;
  std::uint64_t seed = 1;
  /// Append-only JSONL log of answers; empty disables persistence.
  std::filesystem::path log_path;
  bool debug = false;
};

/// Seconds on an arbitrary monotonic scale.
using SessionClock = std::function<double()>;
SessionClock steady_session_clock();

std::string render_transcript(const WordSequence& words);

/// Shared state between annotators (producers) and the trainer (single
/// reader). Every public member locks one mutex, so issuance and submission
/// are linearizable.
class SelectionSession {
 public:
  explicit SelectionSession(SessionOptions options = {}, SessionClock clock = steady_session_clock());

  /// Opens a stage. Pairs answered in an earlier run (per the log) are not
  /// asked again. Throws ServiceError(409) while another stage is open.
  void begin_stage(int stage, std::vector<ServicePair> pairs);

  /// Next unserved pair in randomized presentation order; empty when
  /// exhausted. Expired leases return to the unserved pool first.
  /// Throws ServiceError(409) without an active stage.
  std::optional<PairTicket> next_pair(const std::string& annotator = "");

  /// Returns r for Candidate 1 (always 1 when both transcripts are the
  /// same). Without an annotator the answer is credited to whoever took the
  /// ticket. Errors: 404 unknown ticket, 410 expired lease, 409 already
  /// answered or no active stage.
  int submit_selection(const std::string& ticket_id, Choice choice, const std::string& annotator = "");

  SessionStatus status() const;

  /// Blocks until every pair of the open stage is answered, closes the stage
  /// and returns one Selection per pair in pair order. Throws SelectorAborted
  /// after abort().
  std::vector<Selection> wait_for_selections();

  void abort();

  /// Pairs with their WERs; only for debug sessions (ServiceError 403 otherwise).
  nlohmann::json debug_dump() const;

  double lease_seconds() const { return options_.lease_seconds; }

 private:
  struct Slot {
    ServicePair pair;
    std::optional<int> reward;
    std::string annotator;
    std::string live_ticket;  // empty when unserved or answered
  };
  struct Ticket {
    std::size_t slot = 0;
    bool candidate1_left = true;
    double issued_at = 0.0;
    std::string annotator;
    enum class State { pending, answered, expired } state = State::pending;
  };

  void reclaim_expired_locked(double now);
  void append_log_locked(const nlohmann::json& entry);
  SessionStatus status_locked() const;

  SessionOptions options_;
  SessionClock clock_;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::mt19937_64 rng_;
  std::ofstream log_;
  bool active_ = false;
  bool aborted_ = false;
  int stage_ = -1;
  std::vector<Slot> slots_;
  std::vector<std::size_t> unserved_;  // stack, back is served next
  std::map<std::string, Ticket> tickets_;
  std::deque<std::string> pending_order_;  // issue order, for lease expiry
  std::uint64_t next_ticket_ = 0;
  int duplicates_ = 0;
  int expired_ = 0;
  std::map<std::string, int> answered_by_;
};

/// Selector backed by a session: each select() opens a stage and waits.
class HumanSelector : public Selector {
 public:
  explicit HumanSelector(SelectionSession& session, bool attach_wers = false)
      : session_(session), attach_wers_(attach_wers) {}
  std::vector<Selection> select(const SelectionRequest& request) override;
  std::string describe() const override { return "human"; }

 private:
  SelectionSession& session_;
  bool attach_wers_;
};

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::filesystem::path static_dir;
  bool debug_endpoints = false;
};

/// HTTP front end: GET /api/session, GET /api/pair,
/// POST /api/pair/{ticket}/selection, GET /api/status, and
/// GET /api/debug/pairs when debug endpoints are enabled.
class SelectionServer {
 public:
  SelectionServer(SelectionSession& session, ServerOptions options);
  ~SelectionServer();
  SelectionServer(const SelectionServer&) = delete;
  SelectionServer& operator=(const SelectionServer&) = delete;

  /// Binds and serves on a background thread; returns the bound port.
  int start();
  void stop();
  int port() const { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

nlohmann::json to_json(const PairTicket& t);
nlohmann::json to_json(const SessionStatus& s);

}  // namespace hypsel
