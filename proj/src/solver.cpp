#include "sfi/solver.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <cctype>
#include <cstring>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <vector>

#include <fmt/format.h>

extern char** environ;

namespace sfi {

std::string_view result_name(SolverResult::Kind k) {
  switch (k) {
    case SolverResult::Kind::Unsat: return "unsat";
    case SolverResult::Kind::Sat: return "sat";
    case SolverResult::Kind::Unknown: return "unknown";
  }
  return "?";
}

std::string default_solver_command() {
  if (const char* env = std::getenv("SFI_SOLVER_CMD"); env && *env) return env;
  return SolverOptions{}.command;
}

namespace {

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  ~Fd() { reset(); }

  int get() const { return fd_; }
  explicit operator bool() const { return fd_ >= 0; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

std::pair<Fd, Fd> make_pipe() {
  int fds[2];
  if (::pipe2(fds, O_CLOEXEC) != 0) throw std::runtime_error(fmt::format("pipe: {}", std::strerror(errno)));
  return {Fd(fds[0]), Fd(fds[1])};
}

/// Spawned child that is killed and reaped if still running on destruction.
class Child {
 public:
  explicit Child(pid_t pid) : pid_(pid) {}
  Child(const Child&) = delete;
  Child& operator=(const Child&) = delete;
  ~Child() {
    if (pid_ > 0) {
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, nullptr, 0);
    }
  }

  int wait() {
    int status = 0;
    while (::waitpid(pid_, &status, 0) < 0 && errno == EINTR) {
    }
    pid_ = -1;
    return status;
  }

 private:
  pid_t pid_;
};

void ignore_sigpipe() {
  static std::once_flag once;
  std::call_once(once, [] { ::signal(SIGPIPE, SIG_IGN); });
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

SolverResult unknown(std::string diagnostic) {
  SolverResult r;
  r.diagnostic = std::move(diagnostic);
  return r;
}

}  // namespace

SolverResult run_solver(std::string_view script, const SolverOptions& options) {
  ignore_sigpipe();
  std::string_view head = script;
  if (const auto at = script.find("(get-model)"); at != std::string_view::npos)
    head = script.substr(0, at);

  auto [child_in, to_child] = make_pipe();
  auto [from_child, child_out] = make_pipe();

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, child_in.get(), 0);
  posix_spawn_file_actions_adddup2(&actions, child_out.get(), 1);
  posix_spawn_file_actions_addopen(&actions, 2, "/dev/null", O_WRONLY, 0);
  std::string command = options.command;
  char sh[] = "/bin/sh";
  char dash_c[] = "-c";
  char* argv[] = {sh, dash_c, command.data(), nullptr};
  pid_t pid = -1;
  const int rc = ::posix_spawn(&pid, "/bin/sh", &actions, nullptr, argv, environ);
  posix_spawn_file_actions_destroy(&actions);
  if (rc != 0) return unknown(fmt::format("cannot start solver: {}", std::strerror(rc)));
  Child child(pid);
  child_in.reset();
  child_out.reset();
  ::fcntl(to_child.get(), F_SETFL, O_NONBLOCK);
  ::fcntl(from_child.get(), F_SETFL, O_NONBLOCK);

  std::string pending(head);
  size_t written = 0;
  bool close_after_write = false;
  std::string output;
  std::optional<std::string> answer;
  const auto deadline = std::chrono::steady_clock::now() + options.timeout;

  while (from_child) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) return unknown("solver timed out");

    pollfd fds[2];
    nfds_t n = 0;
    fds[n++] = {from_child.get(), POLLIN, 0};
    if (to_child && written < pending.size()) fds[n++] = {to_child.get(), POLLOUT, 0};
    const int ready = ::poll(fds, n, static_cast<int>(std::min<int64_t>(left.count(), 1000)));
    if (ready < 0 && errno != EINTR) return unknown(fmt::format("poll: {}", std::strerror(errno)));

    if (n == 2 && (fds[1].revents & (POLLOUT | POLLERR | POLLHUP))) {
      const ssize_t k = ::write(to_child.get(), pending.data() + written, pending.size() - written);
      if (k > 0) {
        written += static_cast<size_t>(k);
      } else if (k < 0 && errno != EAGAIN && errno != EINTR) {
        to_child.reset();  // solver went away; its output decides
      }
    }
    if (to_child && close_after_write && written == pending.size()) to_child.reset();

    if (fds[0].revents & (POLLIN | POLLHUP | POLLERR)) {
      char buf[65536];
      const ssize_t k = ::read(from_child.get(), buf, sizeof buf);
      if (k > 0) {
        output.append(buf, static_cast<size_t>(k));
      } else if (k == 0 || (errno != EAGAIN && errno != EINTR)) {
        from_child.reset();
      }
    }

    if (!answer) {
      if (const auto nl = output.find('\n'); nl != std::string::npos) {
        answer = std::string(trim(std::string_view(output).substr(0, nl)));
        pending += *answer == "sat" ? "(get-model)\n(exit)\n" : "(exit)\n";
        close_after_write = true;
      }
    }
  }

  const int status = child.wait();
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
    return unknown(fmt::format("solver exited with status {}: {}", WIFEXITED(status) ? WEXITSTATUS(status) : -1,
                               trim(output.substr(0, 200))));
  if (!answer) return unknown("solver produced no answer");

  SolverResult r;
  if (*answer == "unsat") {
    r.kind = SolverResult::Kind::Unsat;
  } else if (*answer == "sat") {
    try {
      r.model = parse_model(std::string_view(output).substr(output.find('\n') + 1));
      r.kind = SolverResult::Kind::Sat;
    } catch (const std::exception& e) {
      return unknown(fmt::format("unreadable model: {}", e.what()));
    }
  } else {
    r.diagnostic = fmt::format("solver answered '{}'", answer->substr(0, 200));
  }
  return r;
}

namespace {

struct SExpr {
  std::string atom;  // empty for lists
  std::vector<SExpr> items;
  bool is_list = false;
};

class SExprReader {
 public:
  explicit SExprReader(std::string_view text) : s_(text) {}

  bool at_end() {
    skip();
    return pos_ >= s_.size();
  }

  SExpr read() {
    skip();
    if (pos_ >= s_.size()) throw std::runtime_error("unexpected end of model");
    SExpr e;
    if (s_[pos_] == '(') {
      ++pos_;
      e.is_list = true;
      for (;;) {
        skip();
        if (pos_ >= s_.size()) throw std::runtime_error("unbalanced parentheses in model");
        if (s_[pos_] == ')') {
          ++pos_;
          return e;
        }
        e.items.push_back(read());
      }
    }
    if (s_[pos_] == ')') throw std::runtime_error("unexpected ')' in model");
    if (s_[pos_] == '|') {
      const auto end = s_.find('|', pos_ + 1);
      if (end == std::string_view::npos) throw std::runtime_error("unterminated |symbol|");
      e.atom = std::string(s_.substr(pos_ + 1, end - pos_ - 1));
      pos_ = end + 1;
      return e;
    }
    const size_t start = pos_;
    while (pos_ < s_.size() && !std::isspace(static_cast<unsigned char>(s_[pos_])) &&
           s_[pos_] != '(' && s_[pos_] != ')')
      ++pos_;
    e.atom = std::string(s_.substr(start, pos_ - start));
    return e;
  }

 private:
  void skip() {
    while (pos_ < s_.size()) {
      if (std::isspace(static_cast<unsigned char>(s_[pos_]))) {
        ++pos_;
      } else if (s_[pos_] == ';') {
        while (pos_ < s_.size() && s_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::string_view s_;
  size_t pos_ = 0;
};

// Literal values only; solvers also echo defined macros with expression
// bodies, which are not part of the assignment.
std::optional<uint64_t> parse_value(const SExpr& v) {
  if (v.is_list) {
    // (_ bvN W)
    if (v.items.size() == 3 && v.items[0].atom == "_" && v.items[1].atom.starts_with("bv"))
      return std::stoull(v.items[1].atom.substr(2));
    return std::nullopt;
  }
  const std::string& a = v.atom;
  if (a == "true") return 1;
  if (a == "false") return 0;
  if (a.starts_with("#x") && a.size() > 2 && a.size() <= 18) return std::stoull(a.substr(2), nullptr, 16);
  if (a.starts_with("#b") && a.size() > 2 && a.size() <= 66) return std::stoull(a.substr(2), nullptr, 2);
  if (a.starts_with("#")) throw std::runtime_error("unsupported model value '" + a + "'");
  return std::nullopt;
}

void collect(const SExpr& e, sym::Assignment& out) {
  if (!e.is_list) return;
  if (!e.items.empty() && e.items[0].atom == "define-fun") {
    if (e.items.size() != 5 || e.items[1].is_list || !e.items[2].is_list)
      throw std::runtime_error("malformed define-fun in model");
    if (!e.items[2].items.empty()) return;
    if (const auto v = parse_value(e.items[4])) out[e.items[1].atom] = *v;
    return;
  }
  for (const auto& item : e.items) collect(item, out);
}

}  // namespace

sym::Assignment parse_model(std::string_view text) {
  SExprReader reader(text);
  sym::Assignment out;
  bool any = false;
  while (!reader.at_end()) {
    const SExpr e = reader.read();
    if (!e.is_list) throw std::runtime_error("model is not a list");
    if (!e.items.empty() && e.items[0].atom == "error") throw std::runtime_error("solver reported an error");
    collect(e, out);
    any = true;
  }
  if (!any) throw std::runtime_error("empty model");
  return out;
}

}  // namespace sfi
