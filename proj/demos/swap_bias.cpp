// Simulates a log with position and size bias, then looks at it the way the
// swap analysis does: % above diagonal per cell and click-model cross entropy.
//
//   swap_bias [queries] [impressions-per-pane]

#include <cstdio>
#include <cstdlib>

#include "clarify/bias.hpp"
#include "clarify/synthlog.hpp"

using namespace clarify;

int main(int argc, char** argv) {
    SynthConfig sc;
    sc.queries = argc > 1 ? std::atoi(argv[1]) : 2000;
    sc.panes_per_query = 1;
    sc.swap_fraction = 1.0;
    const int n = argc > 2 ? std::atoi(argv[2]) : 50;

    const auto corpus = gen_corpus(sc, 11);
    UserModel user;
    user.kind = UserModelKind::size_offset_logistic;
    user.w_offset = -1.2;
    user.w_size = -1.0;
    const auto stats = simulate_stats(corpus, user, n, 5);

    const auto triples = build_swap_dataset(corpus.panes, &stats);
    std::printf("%zu swap pairs\n\n  K pos  above  below   %%above\n", triples.size());
    for (const auto& [cell, c] : pct_above_diagonal(triples, stats))
        std::printf("%3d %3d %6lld %6lld %8.2f\n", cell.first, cell.second, static_cast<long long>(c.above),
                    static_cast<long long>(c.below), c.pct());

    const auto records = make_swap_records(triples, corpus.panes, stats);
    std::printf("\nmodel            cross entropy (10 folds)\n");
    for (const auto& row : evaluate_click_models(records, 10))
        std::printf("%-16s %.4f +- %.4f\n", std::string(to_string(row.kind)).c_str(), row.mean, row.stddev);

    const auto fit = fit_click_logreg(records, 10);
    std::printf("\nlogistic weights (ctr_l, ctr_r, size_diff, offset)\n");
    std::printf("  label L: %+.3f %+.3f %+.3f %+.3f\n", fit.mean_l[0], fit.mean_l[1], fit.mean_l[2], fit.mean_l[3]);
    std::printf("  label R: %+.3f %+.3f %+.3f %+.3f\n", fit.mean_r[0], fit.mean_r[1], fit.mean_r[2], fit.mean_r[3]);
}
