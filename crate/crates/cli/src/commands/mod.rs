pub mod forecast;
pub mod generate;
pub mod landscape;
pub mod theory;
pub mod train;
