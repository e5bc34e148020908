// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace profloop {

struct ProcessSpec {
  std::vector<std::string> argv;
  std::filesystem::path workdir;  // empty: inherit
  std::map<std::string, std::string> env;
  double timeout_s = 60.0;
};

struct ProcessResult {
  int exit_code = -1;   // valid when !timed_out && signal == 0
  int signal = 0;       // terminating signal, 0 if exited normally
  bool timed_out = false;
  bool launch_failed = false;
  std::string stdout_text;
  std::string stderr_text;
  double elapsed_s = 0.0;

  bool ok() const { return !timed_out && !launch_failed && signal == 0 && exit_code == 0; }
  std::string describe() const;
};

/// Runs a child process in its own process group. On timeout the whole group is
/// killed with SIGKILL, so no child can outlive the deadline.
ProcessResult run_process(const ProcessSpec& spec);

}  // namespace profloop
