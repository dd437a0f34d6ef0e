/* Ask/tell loop over a registered problem through the C interface. */
#include <stdio.h>

#include "bofn.h"

int main(void) {
    BofnProblem *problem = NULL;
    BofnOptimizer *opt = NULL;
    double x[16], h[16], best;

    if (bofn_problem_new("prop2_chain", &problem) != BOFN_STATUS_OK) {
        fprintf(stderr, "%s\n", bofn_last_error());
        return 1;
    }
    size_t dim = bofn_problem_dim(problem);
    size_t nodes = bofn_problem_node_count(problem);
    if (bofn_optimizer_new(problem, BOFN_METHOD_EI_FN, 64, 4, 1, &opt) != BOFN_STATUS_OK) {
        fprintf(stderr, "%s\n", bofn_last_error());
        return 1;
    }
    for (int i = 0; i < 10; i++) {
        if (bofn_optimizer_ask(opt, x, dim) != BOFN_STATUS_OK ||
            bofn_problem_evaluate(problem, x, dim, h, nodes) != BOFN_STATUS_OK ||
            bofn_optimizer_tell(opt, x, dim, h, nodes) != BOFN_STATUS_OK) {
            fprintf(stderr, "%s\n", bofn_last_error());
            return 1;
        }
    }
    bofn_optimizer_best(opt, x, dim, &best);
    printf("best %.6f at x = %.6f\n", best, x[0]);
    bofn_optimizer_free(opt);
    bofn_problem_free(problem);
    return 0;
}
