#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "config.hpp"

namespace proxyset::app {

enum ExitCode : int { kOk = 0, kValidation = 1, kNumerical = 2 };

/// Wall-time log of pipeline steps, written to the error stream.
class StepLog {
public:
    StepLog(std::ostream& err, std::string command) : err_(err), command_(std::move(command)) {}
    void record(const std::string& step, double seconds);

private:
    std::ostream& err_;
    std::string command_;
};

int cmd_search(const RunConfig& config, std::ostream& out, StepLog& log);
int cmd_eval(const RunConfig& config, std::ostream& out, StepLog& log);
int cmd_sweep(const RunConfig& config, std::ostream& out, StepLog& log);
int cmd_synth(const RunConfig& config, std::ostream& out, StepLog& log);
int cmd_validate(const RunConfig& config, std::ostream& out, StepLog& log);

/// Full command line (without the program name). Errors become a message on
/// `err`, a JSON report on `out` and, for commands with an output directory,
/// error.json there.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace proxyset::app
