// SPDX-License-Identifier: Apache-2.0
#include "profloop/process.hpp"

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <fmt/format.h>

#include <chrono>
#include <cstdlib>
#include <cstring>
#include <thread>

#include "profloop/util.hpp"

namespace profloop {
namespace {

// Child output goes to unlinked temp files rather than pipes so a chatty child
// can never block on a full pipe while we wait for it.
int make_temp_fd() {
  char name[] = "/tmp/profloop-XXXXXX";
  int fd = ::mkstemp(name);
  if (fd >= 0) ::unlink(name);
  return fd;
}

std::string slurp_fd(int fd) {
  std::string out;
  if (fd < 0) return out;
  ::lseek(fd, 0, SEEK_SET);
  char buf[8192];
  ssize_t n = 0;
  while ((n = ::read(fd, buf, sizeof buf)) > 0) out.append(buf, static_cast<std::size_t>(n));
  ::close(fd);
  return out;
}

}  // namespace

std::string ProcessResult::describe() const {
  if (launch_failed) return "failed to launch";
  if (timed_out) return fmt::format("timed out after {:.3f}s", elapsed_s);
  if (signal != 0) return fmt::format("killed by signal {} ({})", signal, ::strsignal(signal));
  return fmt::format("exit code {}", exit_code);
}

ProcessResult run_process(const ProcessSpec& spec) {
  ProcessResult result;
  if (spec.argv.empty()) {
    result.launch_failed = true;
    result.stderr_text = "empty argv";
    return result;
  }

  int out_fd = make_temp_fd();
  int err_fd = make_temp_fd();
  // Exec failure is reported through a close-on-exec pipe.
  int status_pipe[2];
  if (::pipe2(status_pipe, O_CLOEXEC) != 0) {
    result.launch_failed = true;
    result.stderr_text = "pipe2 failed";
    return result;
  }

  std::vector<char*> argv;
  argv.reserve(spec.argv.size() + 1);
  for (const auto& a : spec.argv) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);

  auto start = std::chrono::steady_clock::now();
  pid_t pid = ::fork();
  if (pid == 0) {
    ::setpgid(0, 0);
    ::close(status_pipe[0]);
    if (out_fd >= 0) ::dup2(out_fd, STDOUT_FILENO);
    if (err_fd >= 0) ::dup2(err_fd, STDERR_FILENO);
    int devnull = ::open("/dev/null", O_RDONLY);
    if (devnull >= 0) ::dup2(devnull, STDIN_FILENO);
    if (!spec.workdir.empty() && ::chdir(spec.workdir.c_str()) != 0) {
      int e = errno;
      (void)!::write(status_pipe[1], &e, sizeof e);
      ::_exit(127);
    }
    for (const auto& [k, v] : spec.env) ::setenv(k.c_str(), v.c_str(), 1);
    ::execvp(argv[0], argv.data());
    int e = errno;
    (void)!::write(status_pipe[1], &e, sizeof e);
    ::_exit(127);
  }
  ::close(status_pipe[1]);
  if (pid < 0) {
    ::close(status_pipe[0]);
    result.launch_failed = true;
    result.stderr_text = "fork failed";
    return result;
  }
  ::setpgid(pid, pid);

  int exec_errno = 0;
  bool exec_failed = ::read(status_pipe[0], &exec_errno, sizeof exec_errno) == sizeof exec_errno;
  ::close(status_pipe[0]);

  auto deadline = start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                              std::chrono::duration<double>(spec.timeout_s));
  auto sleep_for = std::chrono::microseconds(200);
  int status = 0;
  while (true) {
    pid_t r = ::waitpid(pid, &status, WNOHANG);
    if (r == pid) break;
    if (r < 0 && errno != EINTR) break;
    if (std::chrono::steady_clock::now() >= deadline) {
      ::kill(-pid, SIGKILL);
      ::kill(pid, SIGKILL);
      ::waitpid(pid, &status, 0);
      result.timed_out = true;
      break;
    }
    std::this_thread::sleep_for(sleep_for);
    sleep_for = std::min(sleep_for * 2, std::chrono::microseconds(20000));
  }
  result.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  result.stdout_text = slurp_fd(out_fd);
  result.stderr_text = slurp_fd(err_fd);
  if (exec_failed) {
    result.launch_failed = true;
    result.stderr_text += fmt::format("cannot execute {}: {}", spec.argv.front(), std::strerror(exec_errno));
    return result;
  }
  if (!result.timed_out) {
    if (WIFEXITED(status)) {
      result.exit_code = WEXITSTATUS(status);
    } else if (WIFSIGNALED(status)) {
      result.signal = WTERMSIG(status);
    }
    // Reap stragglers left in the group.
    ::kill(-pid, SIGKILL);
  }
  return result;
}

}  // namespace profloop
