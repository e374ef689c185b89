//! Equivariant MuZero at desk scale.
//!
//! * [`group`]: the rotation group C4 and its actions on grids, actions and
//!   latent states.
//! * [`env`]: a rotation-symmetric MiniPacman grid-world.
//! * [`worldmodel`]: encoder, transition, policy, reward and value networks in
//!   equivariant and baseline form.
//! * [`mcts`]: pUCT search over the learned model with paired random streams.
//! * [`training`]: self-play, target construction, loss and optimization.
//! * [`harness`]: map generation, training, evaluation, audit and plotting
//!   commands.

pub mod env;
pub mod group;
pub mod harness;
pub mod mcts;
pub mod training;
pub mod worldmodel;
