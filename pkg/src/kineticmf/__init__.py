"""kineticmf: kinetic mean-field particle systems and their Fokker-Planck limits.

Subpackages by responsibility:

* ``galerkin``      - spectral truncation: basis, projection, diagonal Laplacian
* ``models``        - dynamics data (forces, diffusion), generator, hypothesis validation
* ``particles``     - N-particle integrator, coupling, trajectories
* ``measures``      - empirical measures, Wasserstein-1, Lyapunov monitoring
* ``fpe``           - single-mode kinetic Fokker-Planck grid solver
* ``adjoint``       - Feynman-Kac backward solver, bound certificates, duality
* ``experiments``   - the numbered verification experiments
* ``cli``           - command-line orchestration
"""

__version__ = "0.1.0"
