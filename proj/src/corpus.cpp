#include "xprompt/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "xprompt/rng.hpp"

namespace xp {

std::vector<UserCorpus> ingest(const std::filesystem::path& root, const Vocabulary& vocab,
                               int max_line_tokens) {
    if (max_line_tokens < 1) {
        throw std::invalid_argument("max_line_tokens must be at least 1");
    }
    if (!std::filesystem::is_directory(root)) {
        throw std::runtime_error("corpus root is not a directory: " + root.string());
    }
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(root)) {
        if (entry.is_regular_file()) {
            files.push_back(entry.path());
        }
    }
    if (files.empty()) {
        throw std::runtime_error("no user files found in " + root.string());
    }
    std::sort(files.begin(), files.end());  // directory order is unspecified

    std::vector<UserCorpus> corpora;
    corpora.reserve(files.size());
    for (const auto& path : files) {
        std::ifstream f(path);
        if (!f) {
            throw std::runtime_error("cannot open user file: " + path.string());
        }
        UserCorpus uc;
        uc.user_id = path.stem().string();
        std::string line;
        while (std::getline(f, line)) {
            while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) {
                line.pop_back();
            }
            std::vector<int> ids = vocab.tokenize(line);
            if (ids.empty()) {
                continue;
            }
            if (static_cast<int>(ids.size()) > max_line_tokens) {
                ids.resize(static_cast<size_t>(max_line_tokens));
            }
            uc.lines.push_back(line);
            uc.examples.push_back({std::move(ids), std::nullopt});
        }
        corpora.push_back(std::move(uc));
    }
    return corpora;
}

namespace {

void append(std::vector<TrainingExample>& out, const std::vector<TrainingExample>& part) {
    out.insert(out.end(), part.begin(), part.end());
}

}  // namespace

std::vector<TrainingExample> Split::all_train() const {
    std::vector<TrainingExample> out;
    for (const auto& u : users) {
        append(out, u.train);
    }
    return out;
}

std::vector<TrainingExample> Split::all_valid() const {
    std::vector<TrainingExample> out;
    for (const auto& u : users) {
        append(out, u.valid);
    }
    return out;
}

std::vector<TrainingExample> Split::all_test() const {
    std::vector<TrainingExample> out;
    for (const auto& u : users) {
        append(out, u.test);
    }
    return out;
}

Split split_corpora(const std::vector<UserCorpus>& corpora, const SplitRatios& ratios,
                    uint64_t seed) {
    if (ratios.train <= 0.0 || ratios.valid <= 0.0 || ratios.test <= 0.0 ||
        std::abs(ratios.train + ratios.valid + ratios.test - 1.0) > 1e-9) {
        throw std::invalid_argument("split ratios must be positive and sum to 1");
    }
    Split split;
    split.users.reserve(corpora.size());
    for (const auto& uc : corpora) {
        UserSplit us;
        us.user_id = uc.user_id;
        const size_t k = uc.examples.size();
        std::vector<size_t> order(k);
        for (size_t i = 0; i < k; ++i) {
            order[i] = i;
        }
        Rng rng(derive_seed(seed, "split:" + uc.user_id));
        rng.shuffle(order);
        size_t c1 = 0;
        size_t c2 = 0;
        if (k < 3) {
            c1 = 1;  // at least one training example, remainder to test
            c2 = 1;
        } else {
            c1 = static_cast<size_t>(std::floor(ratios.train * static_cast<double>(k)));
            c2 = static_cast<size_t>(
                std::floor((ratios.train + ratios.valid) * static_cast<double>(k)));
        }
        for (size_t i = 0; i < k; ++i) {
            const TrainingExample& ex = uc.examples[order[i]];
            if (i < c1) {
                us.train.push_back(ex);
            } else if (i < c2) {
                us.valid.push_back(ex);
            } else {
                us.test.push_back(ex);
            }
        }
        split.users.push_back(std::move(us));
    }
    return split;
}

CorpusStats stats(const std::vector<UserCorpus>& corpora) {
    CorpusStats s;
    s.users = static_cast<int>(corpora.size());
    if (corpora.empty()) {
        return s;
    }
    double sum = 0.0;
    s.max_count = static_cast<int>(corpora.front().examples.size());
    s.min_count = s.max_count;
    for (const auto& uc : corpora) {
        const int n = static_cast<int>(uc.examples.size());
        s.total += n;
        s.max_count = std::max(s.max_count, n);
        s.min_count = std::min(s.min_count, n);
        sum += n;
    }
    s.avg = sum / static_cast<double>(s.users);
    double var = 0.0;
    for (const auto& uc : corpora) {
        const double d = static_cast<double>(uc.examples.size()) - s.avg;
        var += d * d;
    }
    s.stddev = std::sqrt(var / static_cast<double>(s.users));  // population std
    return s;
}

std::string format_stats(const CorpusStats& s) {
    std::ostringstream out;
    out << "users " << s.users << "\n"
        << "examples total " << s.total << "\n"
        << "examples per user: max " << s.max_count << "  min " << s.min_count << "  avg "
        << std::fixed << std::setprecision(1) << s.avg << "  std " << s.stddev << "\n";
    return out.str();
}

}  // namespace xp
