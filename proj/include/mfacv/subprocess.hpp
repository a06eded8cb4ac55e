#pragma once

#include "mfacv/models.hpp"

#include <json.hpp>

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <mutex>
#include <string>
#include <vector>

namespace mfacv {

struct SubprocessSpec {
  std::vector<std::string> argv;
  std::size_t outputs = 1;
  int timeout_ms = 30000;
  std::size_t batch = 256;  // requests in flight per round trip
  std::string name = "subprocess";
};

/// External simulator speaking newline-delimited JSON on stdin/stdout.
/// Request {"id": n, "inputs": [...]}, response {"id": n, "outputs": [...]}.
/// The child is started on first use and kept alive between calls.
class SubprocessModel : public Model {
 public:
  explicit SubprocessModel(SubprocessSpec spec) : spec_(std::move(spec)) {
    if (spec_.argv.empty()) throw std::invalid_argument("subprocess: empty command");
    if (spec_.outputs == 0) throw std::invalid_argument("subprocess: outputs must be positive");
    if (spec_.batch == 0) spec_.batch = 1;
  }
  ~SubprocessModel() override { stop(); }

  SubprocessModel(const SubprocessModel&) = delete;
  SubprocessModel& operator=(const SubprocessModel&) = delete;

  std::string name() const override { return spec_.name; }
  std::size_t outputs() const override { return spec_.outputs; }

  Matrix evaluate(const Samples& samples) const override {
    std::lock_guard<std::mutex> lock(mu_);
    Matrix out(samples.size(), static_cast<Index>(spec_.outputs));
    try {
      start();
      for (Index first = 0; first < samples.size(); first += static_cast<Index>(spec_.batch)) {
        const Index count = std::min<Index>(static_cast<Index>(spec_.batch), samples.size() - first);
        round_trip(samples.inputs, first, count, out);
      }
    } catch (...) {
      stop();
      throw;
    }
    return out;
  }

 private:
  using Clock = std::chrono::steady_clock;

  void start() const {
    if (pid_ > 0) return;
    // A dead child must surface as an error, not kill us on write.
    ::signal(SIGPIPE, SIG_IGN);
    int in_pipe[2], out_pipe[2];
    if (::pipe(in_pipe) != 0) throw EvaluationError("subprocess: pipe failed");
    if (::pipe(out_pipe) != 0) {
      ::close(in_pipe[0]);
      ::close(in_pipe[1]);
      throw EvaluationError("subprocess: pipe failed");
    }
    std::vector<char*> argv;
    for (const auto& a : spec_.argv) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    const pid_t pid = ::fork();
    if (pid < 0) throw EvaluationError("subprocess: fork failed");
    if (pid == 0) {
      ::dup2(in_pipe[0], STDIN_FILENO);
      ::dup2(out_pipe[1], STDOUT_FILENO);
      ::close(in_pipe[0]);
      ::close(in_pipe[1]);
      ::close(out_pipe[0]);
      ::close(out_pipe[1]);
      ::execvp(argv[0], argv.data());
      ::_exit(127);
    }
    ::close(in_pipe[0]);
    ::close(out_pipe[1]);
    to_child_ = in_pipe[1];
    from_child_ = out_pipe[0];
    ::fcntl(to_child_, F_SETFL, ::fcntl(to_child_, F_GETFL) | O_NONBLOCK);
    ::fcntl(from_child_, F_SETFL, ::fcntl(from_child_, F_GETFL) | O_NONBLOCK);
    pid_ = pid;
    buffer_.clear();
  }

  void stop() const {
    if (to_child_ >= 0) ::close(to_child_);
    if (from_child_ >= 0) ::close(from_child_);
    to_child_ = from_child_ = -1;
    if (pid_ > 0) {
      int status = 0;
      if (::waitpid(pid_, &status, WNOHANG) == 0) {
        ::kill(pid_, SIGKILL);
        ::waitpid(pid_, &status, 0);
      }
    }
    pid_ = -1;
    buffer_.clear();
  }

  std::string exit_description() const {
    int status = 0;
    pid_t r = 0;
    // Give the child a moment to finish exiting after closing stdout.
    for (int k = 0; k < 200 && (r = ::waitpid(pid_, &status, WNOHANG)) == 0; ++k) ::usleep(5000);
    if (r == pid_) {
      pid_ = -1;
      if (WIFEXITED(status)) return "exited with status " + std::to_string(WEXITSTATUS(status));
      if (WIFSIGNALED(status)) return "killed by signal " + std::to_string(WTERMSIG(status));
    }
    return "closed its output";
  }

  void round_trip(const Matrix& inputs, Index first, Index count, Matrix& out) const {
    std::string payload;
    for (Index r = first; r < first + count; ++r) {
      nlohmann::json req;
      req["id"] = next_id_ + static_cast<std::uint64_t>(r - first);
      std::vector<double> x(static_cast<std::size_t>(inputs.cols()));
      for (Index c = 0; c < inputs.cols(); ++c) x[static_cast<std::size_t>(c)] = inputs(r, c);
      req["inputs"] = x;
      payload += req.dump();
      payload += '\n';
    }
    const auto deadline = Clock::now() + std::chrono::milliseconds(spec_.timeout_ms);
    std::size_t written = 0;
    Index received = 0;
    while (received < count) {
      // Consume complete lines already buffered.
      std::size_t nl;
      while (received < count && (nl = buffer_.find('\n')) != std::string::npos) {
        const std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        const std::uint64_t expected = next_id_ + static_cast<std::uint64_t>(received);
        parse_response(line, expected, out.row(first + received));
        ++received;
      }
      if (received == count) break;

      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
      if (left <= 0) {
        throw EvaluationError(spec_.name + ": timeout after " + std::to_string(spec_.timeout_ms) +
                              " ms waiting for id " + std::to_string(next_id_ + static_cast<std::uint64_t>(received)));
      }
      pollfd fds[2];
      int nfds = 0;
      fds[nfds++] = {from_child_, POLLIN, 0};
      if (written < payload.size()) fds[nfds++] = {to_child_, POLLOUT, 0};
      const int rc = ::poll(fds, static_cast<nfds_t>(nfds), static_cast<int>(std::min<long long>(left, 1000)));
      if (rc < 0) {
        if (errno == EINTR) continue;
        throw EvaluationError(spec_.name + ": poll failed: " + std::strerror(errno));
      }
      if (nfds == 2 && (fds[1].revents & (POLLOUT | POLLERR | POLLHUP))) {
        const ssize_t w = ::write(to_child_, payload.data() + written, payload.size() - written);
        if (w < 0 && errno != EAGAIN && errno != EINTR) {
          throw EvaluationError(spec_.name + ": child " + exit_description() + " (write failed)");
        }
        if (w > 0) written += static_cast<std::size_t>(w);
      }
      if (fds[0].revents & (POLLIN | POLLHUP | POLLERR)) {
        char chunk[65536];
        const ssize_t n = ::read(from_child_, chunk, sizeof chunk);
        if (n == 0) {
          throw EvaluationError(spec_.name + ": child " + exit_description() + " before answering id " +
                                std::to_string(next_id_ + static_cast<std::uint64_t>(received)));
        }
        if (n < 0 && errno != EAGAIN && errno != EINTR) {
          throw EvaluationError(spec_.name + ": read failed: " + std::strerror(errno));
        }
        if (n > 0) buffer_.append(chunk, static_cast<std::size_t>(n));
      }
    }
    next_id_ += static_cast<std::uint64_t>(count);
  }

  template <class Row>
  void parse_response(const std::string& line, std::uint64_t expected, Row row) const {
    auto bad = [&](const std::string& why) {
      return EvaluationError(spec_.name + ": malformed response for id " + std::to_string(expected) + ": " + why);
    };
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw bad("not valid JSON: '" + line.substr(0, 200) + "'");
    }
    if (!j.is_object() || !j.contains("id") || !j["id"].is_number_unsigned()) throw bad("missing or invalid \"id\"");
    if (j["id"].get<std::uint64_t>() != expected) {
      throw bad("got id " + std::to_string(j["id"].get<std::uint64_t>()));
    }
    if (!j.contains("outputs") || !j["outputs"].is_array()) throw bad("missing \"outputs\" array");
    const auto& o = j["outputs"];
    if (o.size() != spec_.outputs) {
      throw bad("expected " + std::to_string(spec_.outputs) + " outputs, got " + std::to_string(o.size()));
    }
    for (std::size_t d = 0; d < o.size(); ++d) {
      if (!o[d].is_number()) throw bad("non-numeric output");
      row[static_cast<Index>(d)] = o[d].get<double>();
    }
  }

  SubprocessSpec spec_;
  mutable std::mutex mu_;
  mutable pid_t pid_ = -1;
  mutable int to_child_ = -1;
  mutable int from_child_ = -1;
  mutable std::string buffer_;
  mutable std::uint64_t next_id_ = 0;
};

inline ModelPtr subprocess_model(SubprocessSpec spec) { return std::make_shared<SubprocessModel>(std::move(spec)); }

}  // namespace mfacv
