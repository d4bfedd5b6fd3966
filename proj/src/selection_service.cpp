#include "hypsel/selection_service.hpp"

#include <chrono>
#include <cstdio>
#include <thread>

#include "httplib.h"

#include "hypsel/error.hpp"

namespace hypsel {

using nlohmann::json;

Choice choice_from_string(const std::string& s) {
  if (s == "left") return Choice::left;
  if (s == "right") return Choice::right;
  throw ServiceError(400, "choice must be \"left\" or \"right\"");
}

SessionClock steady_session_clock() {
  return [] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
  };
}

std::string render_transcript(const WordSequence& words) {
  std::string s;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) s += ' ';
    s += 'w' + std::to_string(words[i]);
  }
  return s;
}

SelectionSession::SelectionSession(SessionOptions options, SessionClock clock)
    : options_(std::move(options)), clock_(std::move(clock)), rng_(options_.seed) {
  if (!(options_.lease_seconds > 0.0)) throw ConfigError("lease_seconds", "must be positive");
  if (!options_.log_path.empty()) {
    if (options_.log_path.has_parent_path()) std::filesystem::create_directories(options_.log_path.parent_path());
    log_.open(options_.log_path, std::ios::app);
    if (!log_) throw IoError("cannot open selection log " + options_.log_path.string());
  }
}

void SelectionSession::append_log_locked(const json& entry) {
  if (!log_.is_open()) return;
  log_ << entry.dump() << '\n';
  log_.flush();
  if (!log_) throw IoError("failed to append to selection log " + options_.log_path.string());
}

void SelectionSession::begin_stage(int stage, std::vector<ServicePair> pairs) {
  std::lock_guard lock(mutex_);
  if (active_) throw ServiceError(409, "stage " + std::to_string(stage_) + " is still open");
  if (pairs.empty()) throw ValidationError("a stage needs at least one pair");
  slots_.clear();
  unserved_.clear();
  tickets_.clear();
  pending_order_.clear();
  for (auto& p : pairs) slots_.push_back(Slot{std::move(p), std::nullopt, "", ""});

  if (!options_.log_path.empty() && std::filesystem::exists(options_.log_path)) {
    std::map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < slots_.size(); ++i) by_id.emplace(slots_[i].pair.utterance_id, i);
    std::ifstream in(options_.log_path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json e;
      try {
        e = json::parse(line);
      } catch (const json::exception&) {
        continue;  // torn final line from a crash
      }
      if (e.value("type", "") != "answer" || e.value("stage", -1) != stage) continue;
      auto it = by_id.find(e.value("utterance_id", ""));
      if (it == by_id.end() || slots_[it->second].reward) continue;
      slots_[it->second].reward = e.at("reward").get<int>();
      slots_[it->second].annotator = e.value("annotator", "");
    }
  }
  for (std::size_t i = slots_.size(); i-- > 0;)
    if (!slots_[i].reward) unserved_.push_back(i);
  stage_ = stage;
  active_ = true;
  aborted_ = false;
  cv_.notify_all();
}

void SelectionSession::reclaim_expired_locked(double now) {
  while (!pending_order_.empty()) {
    auto it = tickets_.find(pending_order_.front());
    if (it != tickets_.end() && it->second.state == Ticket::State::pending) {
      if (now - it->second.issued_at <= options_.lease_seconds) break;
      it->second.state = Ticket::State::expired;
      ++expired_;
      Slot& slot = slots_[it->second.slot];
      slot.live_ticket.clear();
      unserved_.push_back(it->second.slot);
    }
    pending_order_.pop_front();
  }
}

std::optional<PairTicket> SelectionSession::next_pair(const std::string& annotator) {
  std::lock_guard lock(mutex_);
  if (!active_) throw ServiceError(409, "no active stage");
  const double now = clock_();
  reclaim_expired_locked(now);
  if (unserved_.empty()) return std::nullopt;
  const std::size_t idx = unserved_.back();
  unserved_.pop_back();

  char buf[64];
  std::snprintf(buf, sizeof(buf), "s%d-%06llu-%08llx", stage_, static_cast<unsigned long long>(next_ticket_++),
                static_cast<unsigned long long>(rng_() & 0xffffffffULL));
  const bool candidate1_left = std::bernoulli_distribution(0.5)(rng_);
  Ticket t;
  t.slot = idx;
  t.candidate1_left = candidate1_left;
  t.issued_at = now;
  t.annotator = annotator;
  tickets_.emplace(buf, t);
  pending_order_.push_back(buf);
  Slot& slot = slots_[idx];
  slot.live_ticket = buf;

  PairTicket ticket;
  ticket.ticket_id = buf;
  ticket.utterance_id = slot.pair.utterance_id;
  const std::string c1 = render_transcript(slot.pair.candidate1);
  const std::string c2 = render_transcript(slot.pair.candidate2);
  ticket.transcript1 = candidate1_left ? c1 : c2;
  ticket.transcript2 = candidate1_left ? c2 : c1;
  ticket.stage = stage_;
  ticket.issued_at = now;
  return ticket;
}

int SelectionSession::submit_selection(const std::string& ticket_id, Choice choice, const std::string& annotator) {
  std::lock_guard lock(mutex_);
  if (!active_) throw ServiceError(409, "no active stage");
  auto it = tickets_.find(ticket_id);
  if (it == tickets_.end()) throw ServiceError(404, "unknown ticket " + ticket_id);
  Ticket& t = it->second;
  if (t.state == Ticket::State::answered) {
    ++duplicates_;
    append_log_locked(json{{"type", "duplicate"},
                           {"stage", stage_},
                           {"ticket", ticket_id},
                           {"utterance_id", slots_[t.slot].pair.utterance_id},
                           {"choice", choice == Choice::left ? "left" : "right"},
                           {"annotator", annotator}});
    throw ServiceError(409, "ticket " + ticket_id + " was already answered");
  }
  reclaim_expired_locked(clock_());
  if (t.state == Ticket::State::expired) throw ServiceError(410, "lease on ticket " + ticket_id + " expired");

  Slot& slot = slots_[t.slot];
  // Between identical transcripts either side is Candidate 1.
  const bool identical = slot.pair.candidate1 == slot.pair.candidate2;
  const int reward = identical || (choice == Choice::left) == t.candidate1_left ? 1 : 0;
  const std::string& who = annotator.empty() ? t.annotator : annotator;
  append_log_locked(json{{"type", "answer"},
                         {"stage", stage_},
                         {"ticket", ticket_id},
                         {"utterance_id", slot.pair.utterance_id},
                         {"reward", reward},
                         {"annotator", who}});
  t.state = Ticket::State::answered;
  slot.reward = reward;
  slot.annotator = who;
  slot.live_ticket.clear();
  ++answered_by_[who];
  cv_.notify_all();
  return reward;
}

SessionStatus SelectionSession::status_locked() const {
  SessionStatus s;
  s.active = active_;
  s.stage = stage_;
  s.total = static_cast<int>(slots_.size());
  s.tickets_issued = static_cast<int>(tickets_.size());
  s.duplicates = duplicates_;
  s.expired = expired_;
  s.answered_by = answered_by_;
  const double now = clock_();
  double wer_sum = 0.0;
  int wer_n = 0;
  for (const Slot& slot : slots_) {
    if (slot.reward) {
      ++s.answered;
      if (options_.debug && slot.pair.candidate_wers) {
        wer_sum += *slot.reward == 1 ? slot.pair.candidate_wers->first.wer() : slot.pair.candidate_wers->second.wer();
        ++wer_n;
      }
    } else if (!slot.live_ticket.empty() &&
               now - tickets_.at(slot.live_ticket).issued_at <= options_.lease_seconds) {
      ++s.pending;
    } else {
      ++s.unserved;
    }
  }
  if (wer_n > 0) s.selected_wer_so_far = wer_sum / wer_n;
  return s;
}

SessionStatus SelectionSession::status() const {
  std::lock_guard lock(mutex_);
  return status_locked();
}

std::vector<Selection> SelectionSession::wait_for_selections() {
  std::unique_lock lock(mutex_);
  if (!active_) throw ServiceError(409, "no active stage");
  cv_.wait(lock, [&] {
    if (aborted_) return true;
    for (const Slot& s : slots_)
      if (!s.reward) return false;
    return true;
  });
  if (aborted_) {
    active_ = false;
    throw SelectorAborted("selection session aborted during stage " + std::to_string(stage_));
  }
  std::vector<Selection> out;
  for (const Slot& s : slots_) {
    Selection sel;
    sel.reward = *s.reward;
    sel.source = SelectionSource::human;
    sel.candidate_wers = s.pair.candidate_wers;
    out.push_back(sel);
  }
  active_ = false;
  return out;
}

void SelectionSession::abort() {
  std::lock_guard lock(mutex_);
  aborted_ = true;
  cv_.notify_all();
}

json SelectionSession::debug_dump() const {
  std::lock_guard lock(mutex_);
  if (!options_.debug) throw ServiceError(403, "debug endpoints are disabled");
  json pairs = json::array();
  for (const Slot& s : slots_) {
    json p{{"utterance_id", s.pair.utterance_id},
           {"candidate1", render_transcript(s.pair.candidate1)},
           {"candidate2", render_transcript(s.pair.candidate2)},
           {"reward", s.reward ? json(*s.reward) : json(nullptr)}};
    if (s.pair.candidate_wers) {
      p["candidate1_wer"] = s.pair.candidate_wers->first.wer();
      p["candidate2_wer"] = s.pair.candidate_wers->second.wer();
    }
    pairs.push_back(std::move(p));
  }
  return json{{"stage", stage_}, {"pairs", std::move(pairs)}};
}

std::vector<Selection> HumanSelector::select(const SelectionRequest& request) {
  std::vector<ServicePair> pairs;
  for (std::size_t i = 0; i < request.pairs.size(); ++i) {
    const CandidatePair& cp = request.pairs[i];
    ServicePair sp{cp.utterance_id, cp.candidate1.words, cp.candidate2.words, std::nullopt};
    if (attach_wers_ && i < request.utterances.size() && request.utterances[i] != nullptr) {
      const WordSequence& ref = request.utterances[i]->reference;
      sp.candidate_wers = std::make_pair(word_error_rate(cp.candidate1.words, ref),
                                         word_error_rate(cp.candidate2.words, ref));
    }
    pairs.push_back(std::move(sp));
  }
  session_.begin_stage(request.stage, std::move(pairs));
  return session_.wait_for_selections();
}

json to_json(const PairTicket& t) {
  return json{{"ticket", t.ticket_id},       {"utterance_id", t.utterance_id}, {"transcript1", t.transcript1},
              {"transcript2", t.transcript2}, {"stage", t.stage},               {"issued_at", t.issued_at}};
}

json to_json(const SessionStatus& s) {
  json j{{"active", s.active},
         {"stage", s.stage},
         {"total", s.total},
         {"answered", s.answered},
         {"pending", s.pending},
         {"remaining", s.unserved},
         {"served", s.tickets_issued},
         {"duplicates", s.duplicates},
         {"expired", s.expired},
         {"annotators", s.answered_by}};
  if (s.selected_wer_so_far) j["selected_wer_so_far"] = *s.selected_wer_so_far;
  return j;
}

struct SelectionServer::Impl {
  SelectionSession& session;
  ServerOptions options;
  httplib::Server server;
  std::thread thread;

  Impl(SelectionSession& s, ServerOptions o) : session(s), options(std::move(o)) {}
};

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

std::string annotator_of(const httplib::Request& req) {
  if (req.has_header("X-Annotator")) return req.get_header_value("X-Annotator");
  if (req.has_param("annotator")) return req.get_param_value("annotator");
  return "";
}

template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const ServiceError& e) {
      send_json(res, e.status(), json{{"error", to_string(e.kind())}, {"status", e.status()}, {"message", e.what()}});
    } catch (const Error& e) {
      send_json(res, 500, json{{"error", to_string(e.kind())}, {"status", 500}, {"message", e.what()}});
    }
  };
}

}  // namespace

SelectionServer::SelectionServer(SelectionSession& session, ServerOptions options)
    : impl_(std::make_unique<Impl>(session, std::move(options))) {
  auto& svr = impl_->server;
  SelectionSession& s = impl_->session;

  svr.Get("/api/session", guarded([&s](const httplib::Request&, httplib::Response& res) {
            const SessionStatus st = s.status();
            send_json(res, 200,
                      json{{"active", st.active},
                           {"stage", st.stage},
                           {"total", st.total},
                           {"lease_seconds", s.lease_seconds()}});
          }));
  svr.Get("/api/pair", guarded([&s](const httplib::Request& req, httplib::Response& res) {
            const auto ticket = s.next_pair(annotator_of(req));
            if (!ticket) {
              send_json(res, 200, json{{"exhausted", true}});
              return;
            }
            send_json(res, 200, to_json(*ticket));
          }));
  svr.Post(R"(/api/pair/([^/]+)/selection)", guarded([&s](const httplib::Request& req, httplib::Response& res) {
             json body;
             try {
               body = json::parse(req.body);
             } catch (const json::exception&) {
               throw ServiceError(400, "request body must be JSON");
             }
             if (!body.is_object() || !body.contains("choice") || !body["choice"].is_string())
               throw ServiceError(400, "body must be {\"choice\": \"left\"|\"right\"}");
             const std::string ticket = req.matches[1];
             const Choice choice = choice_from_string(body["choice"].get<std::string>());
             s.submit_selection(ticket, choice, annotator_of(req));
             send_json(res, 200, json{{"ticket", ticket}, {"accepted", true}});
           }));
  svr.Get("/api/status", guarded([&s](const httplib::Request&, httplib::Response& res) {
            SessionStatus st = s.status();
            json j = to_json(st);
            j.erase("selected_wer_so_far");
            send_json(res, 200, j);
          }));
  if (impl_->options.debug_endpoints) {
    svr.Get("/api/debug/pairs", guarded([&s](const httplib::Request&, httplib::Response& res) {
              send_json(res, 200, s.debug_dump());
            }));
    svr.Get("/api/debug/status", guarded([&s](const httplib::Request&, httplib::Response& res) {
              send_json(res, 200, to_json(s.status()));
            }));
  }
  if (!impl_->options.static_dir.empty()) {
    if (!svr.set_mount_point("/", impl_->options.static_dir.string()))
      throw IoError("static directory not found: " + impl_->options.static_dir.string());
  }
}

SelectionServer::~SelectionServer() { stop(); }

int SelectionServer::start() {
  auto& svr = impl_->server;
  if (impl_->options.port == 0) {
    port_ = svr.bind_to_any_port(impl_->options.host);
  } else {
    port_ = svr.bind_to_port(impl_->options.host, impl_->options.port) ? impl_->options.port : -1;
  }
  if (port_ < 0) throw IoError("cannot bind " + impl_->options.host + ":" + std::to_string(impl_->options.port));
  impl_->thread = std::thread([&svr] { svr.listen_after_bind(); });
  svr.wait_until_ready();
  return port_;
}

void SelectionServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace hypsel
