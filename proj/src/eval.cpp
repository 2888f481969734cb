#include "xprompt/eval.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "engine.hpp"
#include "xprompt/threading.hpp"

namespace xp {
namespace {

void check_condition(const EvalCondition& c) {
    if (c.tmpl.has_imaginary_slot() != c.imaginary_id.has_value()) {
        throw std::invalid_argument(
            "condition's imaginary binding disagrees with its template's {X} slot");
    }
    if (c.tmpl.has_keyword_slot() != c.keyword_hint) {
        throw std::invalid_argument(
            "condition's keyword_hint disagrees with its template's {K} slot");
    }
}

struct ExampleEval {
    ScoredTokens scored;
    std::vector<int> refs;  // tokens actually scored (after any truncation)
};

ExampleEval eval_example(const Engine<float>& eng, const Mat<float>& ext,
                         const EvalCondition& c, const TrainingExample& ex,
                         const Vocabulary& vocab) {
    Bindings b;
    b.imaginary_id = c.imaginary_id;
    if (c.keyword_hint) {
        if (!ex.keyword.has_value()) {
            throw std::runtime_error("keyword hint requires annotated example");
        }
        b.keyword = *ex.keyword;
    }
    const std::vector<int> prompt = render(c.tmpl, b, vocab);
    const int room = eng.config().max_seq_len - static_cast<int>(prompt.size());
    if (room < 1) {
        throw std::runtime_error("prompt leaves no room for the continuation");
    }
    std::vector<int> cont = ex.continuation_ids;
    if (static_cast<int>(cont.size()) > room) {
        cont.resize(static_cast<size_t>(room));
    }
    ExampleEval out;
    out.scored = eng.score_tokens(ext, prompt, cont);
    out.refs = std::move(cont);
    return out;
}

EvalResult pool(const std::vector<ExampleEval>& per_example, std::vector<TokenRecord>* dump) {
    EvalResult res;
    long correct = 0;
    for (size_t i = 0; i < per_example.size(); ++i) {
        const auto& e = per_example[i];
        for (size_t t = 0; t < e.refs.size(); ++t) {
            res.total_nll += e.scored.nll[t];
            res.tokens += 1;
            if (e.scored.argmax[t] == e.refs[t]) {
                ++correct;
            }
            if (dump != nullptr) {
                dump->push_back({static_cast<int>(i), static_cast<int>(t), e.refs[t],
                                 e.scored.argmax[t], e.scored.nll[t]});
            }
        }
    }
    if (res.tokens == 0) {
        throw std::runtime_error("zero evaluation tokens");
    }
    res.ppl = std::exp(res.total_nll / static_cast<double>(res.tokens));
    res.accuracy = static_cast<double>(correct) / static_cast<double>(res.tokens);
    return res;
}

EvalResult eval_core(const Engine<float>& eng, const Mat<float>& ext, const EvalCondition& c,
                     const std::vector<TrainingExample>& dataset, const Vocabulary& vocab,
                     int threads, std::vector<TokenRecord>* dump) {
    check_condition(c);
    if (dataset.empty()) {
        throw std::invalid_argument("empty evaluation dataset");
    }
    std::vector<ExampleEval> per_example(dataset.size());
    parallel_for(dataset.size(), threads, [&](size_t i) {
        per_example[i] = eval_example(eng, ext, c, dataset[i], vocab);
    });
    return pool(per_example, dump);
}

}  // namespace

EvalResult evaluate_condition(const ModelWeights& w, const EmbeddingTable& emb,
                              const EvalCondition& condition,
                              const std::vector<TrainingExample>& dataset,
                              const Vocabulary& vocab, int threads,
                              std::vector<TokenRecord>* dump) {
    const Engine<float> eng(w);
    return eval_core(eng, emb.extension, condition, dataset, vocab, threads, dump);
}

double perplexity(const ModelWeights& w, const EmbeddingTable& emb, const EvalCondition& condition,
                  const std::vector<TrainingExample>& dataset, const Vocabulary& vocab) {
    return evaluate_condition(w, emb, condition, dataset, vocab).ppl;
}

double next_word_accuracy(const ModelWeights& w, const EmbeddingTable& emb,
                          const EvalCondition& condition,
                          const std::vector<TrainingExample>& dataset, const Vocabulary& vocab) {
    return evaluate_condition(w, emb, condition, dataset, vocab).accuracy;
}

RobustnessReport robustness_matrix(const ModelWeights& w, const EmbeddingTable& emb,
                                   const Vocabulary& vocab, int full_id, int wopa_id,
                                   const std::vector<TrainingExample>& dataset,
                                   const RobustnessConfig& config) {
    if (!vocab.is_imaginary(full_id) || !vocab.is_imaginary(wopa_id)) {
        throw std::invalid_argument("missing learned variant for the robustness grid");
    }
    for (const auto& ex : dataset) {
        if (!ex.keyword.has_value()) {
            throw std::invalid_argument("dataset is not keyword-annotated");
        }
    }
    const Engine<float> eng(w);
    RobustnessReport report;
    report.ood = config.ood;

    const std::array<std::optional<int>, 3> row_ids = {std::nullopt, wopa_id, full_id};
    const std::array<std::string, 3> row_names = {"NL", "X-Prompt (w/o PA)", "X-Prompt"};
    for (int r = 0; r < 3; ++r) {
        for (int hint = 0; hint < 2; ++hint) {
            EvalCondition c;
            const bool x_row = row_ids[static_cast<size_t>(r)].has_value();
            c.tmpl = x_row ? (hint == 1 ? config.x_hint : config.x_plain)
                           : (hint == 1 ? config.nl_hint : config.nl_plain);
            c.imaginary_id = row_ids[static_cast<size_t>(r)];
            c.keyword_hint = hint == 1;
            c.label = row_names[static_cast<size_t>(r)] +
                      (hint == 1 ? " / keyword hints" : " / no hints");
            const EvalResult res =
                eval_core(eng, emb.extension, c, dataset, vocab, config.threads, nullptr);
            report.cells[static_cast<size_t>(r)][static_cast<size_t>(hint)] = {
                res.ppl, res.accuracy, res.tokens};
        }
        report.hint_delta[static_cast<size_t>(r)] =
            report.cells[static_cast<size_t>(r)][0].ppl -
            report.cells[static_cast<size_t>(r)][1].ppl;
    }
    return report;
}

std::string report_json(const RobustnessReport& report) {
    nlohmann::json j;
    j["ood_template"] = report.ood;
    const std::array<std::string, 3> rows = {"nl", "xprompt_wo_pa", "xprompt"};
    const std::array<std::string, 2> cols = {"no_hint", "keyword_hint"};
    for (size_t r = 0; r < 3; ++r) {
        for (size_t c = 0; c < 2; ++c) {
            const auto& cell = report.cells[r][c];
            j["cells"][rows[r]][cols[c]] = {
                {"ppl", cell.ppl}, {"accuracy", cell.accuracy}, {"tokens", cell.tokens}};
        }
        j["hint_ppl_improvement"][rows[r]] = report.hint_delta[r];
    }
    return j.dump(2);
}

std::string report_table(const RobustnessReport& report) {
    std::ostringstream out;
    out << "prompt robustness (" << (report.ood ? "held-out" : "training") << " template)\n";
    out << std::left << std::setw(22) << "condition" << std::right << std::setw(13)
        << "ppl(no hint)" << std::setw(13) << "ppl(hint)" << std::setw(13) << "acc(no hint)"
        << std::setw(13) << "acc(hint)" << std::setw(13) << "hint dPPL" << "\n";
    const std::array<std::string, 3> rows = {"NL prompt", "X-Prompt (w/o PA)", "X-Prompt"};
    out << std::fixed;
    for (size_t r = 0; r < 3; ++r) {
        out << std::left << std::setw(22) << rows[r] << std::right << std::setprecision(3)
            << std::setw(13) << report.cells[r][0].ppl << std::setw(13) << report.cells[r][1].ppl
            << std::setw(13) << report.cells[r][0].accuracy << std::setw(13)
            << report.cells[r][1].accuracy << std::setw(13) << report.hint_delta[r] << "\n";
    }
    return out.str();
}

void save_token_dump(const std::filesystem::path& path, const std::vector<TokenRecord>& dump) {
    std::ofstream f(path);
    if (!f) {
        throw std::runtime_error("cannot write token dump: " + path.string());
    }
    for (const auto& t : dump) {
        nlohmann::json j;
        j["example"] = t.example;
        j["pos"] = t.pos;
        j["ref"] = t.ref;
        j["argmax"] = t.argmax;
        j["nll"] = t.nll;
        f << j.dump() << '\n';
    }
    if (!f) {
        throw std::runtime_error("write failed: " + path.string());
    }
}

}  // namespace xp
