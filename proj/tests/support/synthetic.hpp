#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seqrec/data.hpp"

namespace seqrec::testsupport {

/// Cluster-structured interaction log: items are split into clusters and
/// each user walks within a cluster, hopping to another with probability
/// hop_prob. Gives sequences a learnable next-item signal.
std::vector<Interaction> synthetic_interactions(int num_users, int num_items, int num_clusters,
                                                int len_lo, int len_hi, double hop_prob,
                                                std::uint64_t seed);

/// synthetic_interactions -> build_dataset in one step.
SequenceDataset synthetic_dataset(int num_users, int num_items, int num_clusters, int len_lo,
                                  int len_hi, double hop_prob, std::uint64_t seed);

/// Writes content to a fresh file under the system temp directory and
/// returns its path.
std::string write_temp_file(const std::string& name, const std::string& content);

/// A scratch directory under the system temp directory (created empty;
/// unique per name + process).
std::string temp_dir(const std::string& name);

}  // namespace seqrec::testsupport
