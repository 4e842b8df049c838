#pragma once

namespace mhla::cli {

// Exit codes: 0 success, 1 check failure, 2 usage error, 3 IO error.
int run(int argc, char** argv);

}  // namespace mhla::cli
