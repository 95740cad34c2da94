pub(crate) mod conv;
mod elementwise;
pub(crate) mod loss;
pub(crate) mod norm;
mod shape;

#[cfg(test)]
pub(crate) mod testutil;
