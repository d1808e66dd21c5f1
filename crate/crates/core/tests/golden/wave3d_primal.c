#include <math.h>

int wave3d(int n, double C, double D, double *restrict u, const double *restrict u_1, const double *restrict u_2, const double *restrict c) {
  int i, j, k;
  #pragma omp parallel for private(i,j,k)
  for ( i=1; i<=n - 2; i++ ) {
    for ( j=1; j<=n - 2; j++ ) {
      for ( k=1; k<=n - 2; k++ ) {
        u[(i)*n*n + (j)*n + (k)] += 2.0*u_1[(i)*n*n + (j)*n + (k)] - u_2[(i)*n*n + (j)*n + (k)] + D*c[(i)*n*n + (j)*n + (k)]*(u_1[(i - 1)*n*n + (j)*n + (k)] + u_1[(i)*n*n + (j - 1)*n + (k)] + u_1[(i)*n*n + (j)*n + (k - 1)] - 6.0*u_1[(i)*n*n + (j)*n + (k)] + u_1[(i)*n*n + (j)*n + (k + 1)] + u_1[(i)*n*n + (j + 1)*n + (k)] + u_1[(i + 1)*n*n + (j)*n + (k)]);
      }
    }
  }
  return 0;
}
