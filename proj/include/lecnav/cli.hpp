#pragma once

// Command-line front end: schema-validated JSON experiment configs dispatched
// to map synthesis, teacher generation, EC / LEC training, policy evaluation,
// and cross-run comparison. Every run owns an output directory with a
// manifest and per-seed subdirectories; seeds run as parallel workers.

namespace lecnav::cli {

// Full argv-style entry point, shared by the binary and the tests.
// Returns 0 on success, 2 on a config or usage error, 3 on a runtime error.
int main_impl(int argc, const char* const* argv);

}  // namespace lecnav::cli
