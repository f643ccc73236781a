//! Control-variate and maximum-likelihood estimators for sketched inner
//! products, stochastic trace estimators with control variates, and the
//! exponential-family identities that connect them.

pub mod bench;
pub mod efamily;
pub mod inner_product;
pub mod sketch;
pub mod trace;
