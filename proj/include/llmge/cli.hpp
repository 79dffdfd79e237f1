#pragma once

// Command-line front end:
//   llmge run --config cfg.yaml --out rundir [--resume] [overrides]
//   llmge validate file.yaml [--mode GE1|GE2] [--scale s]
//   llmge analyze file.yaml [--scale s] [--imgsz N]
//   llmge score --dets d.jsonl --gt kitti_labels/ [--conf c]
//   llmge metrics --runs rundir1 [rundir2 ...] [--out figs/] [--joint]
//
// Exit codes: 0 success, 1 domain error (JSON on stderr) or invalid genome,
// 2 usage error.

#include <ostream>
#include <string>
#include <vector>

namespace llmge {

// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace llmge
