#pragma once

#include <iosfwd>

namespace maskdm {

// Entry point behind the `maskdm` executable. Subcommands: pretrain,
// finetune, sample, eval-fd, make-toy. Returns 0 on success, 1 on runtime
// errors and 2 on usage errors.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// Keeps freed tensor buffers inside the process heap instead of returning them
// to the kernel after every op. Training allocates and frees the same large
// buffers each step, and without this glibc spends much of a step in mmap and
// page faults. No-op on other C libraries.
void tune_allocator();

}  // namespace maskdm
