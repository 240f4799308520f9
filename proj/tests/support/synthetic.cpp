#include "support/synthetic.hpp"

#include <filesystem>
#include <fstream>

#include "seqrec/common.hpp"

namespace seqrec::testsupport {

std::vector<Interaction> synthetic_interactions(int num_users, int num_items, int num_clusters,
                                                int len_lo, int len_hi, double hop_prob,
                                                std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x57a7));
    const int per_cluster = num_items / num_clusters;
    std::vector<Interaction> out;
    for (int u = 1; u <= num_users; ++u) {
        const int len = static_cast<int>(rng.uniform_int(len_lo, len_hi));
        int cluster = static_cast<int>(rng.below(num_clusters));
        for (int t = 0; t < len; ++t) {
            if (rng.next_double() < hop_prob) cluster = static_cast<int>(rng.below(num_clusters));
            const int item = cluster * per_cluster + static_cast<int>(rng.below(per_cluster)) + 1;
            out.push_back({"u" + std::to_string(u), "i" + std::to_string(item),
                           static_cast<std::int64_t>(t)});
        }
    }
    return out;
}

SequenceDataset synthetic_dataset(int num_users, int num_items, int num_clusters, int len_lo,
                                  int len_hi, double hop_prob, std::uint64_t seed) {
    return build_dataset(synthetic_interactions(num_users, num_items, num_clusters, len_lo, len_hi,
                                                hop_prob, seed));
}

std::string write_temp_file(const std::string& name, const std::string& content) {
    const auto dir = std::filesystem::temp_directory_path() / "seqrec_tests";
    std::filesystem::create_directories(dir);
    const auto path = dir / name;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
    return path.string();
}

std::string temp_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "seqrec_tests" / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

}  // namespace seqrec::testsupport
