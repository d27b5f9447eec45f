#pragma once

namespace pyraflow {

// Full command-line entry point. Returns the process exit code:
// 0 success, 1 usage error, 2 data/format/config/io error, 3 numeric failure.
int cli_main(int argc, char** argv);

}  // namespace pyraflow
